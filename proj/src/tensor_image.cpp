#include "v2v/tensor_image.hpp"

#include <cmath>
#include <limits>

#include "v2v/error.hpp"

namespace v2v {

torch::Tensor frames_to_tensor(const std::vector<cv::Mat>& frames) {
  if (frames.empty()) throw Error(ErrorKind::EmptyVideo, "frames_to_tensor: no frames");
  const int h = frames[0].rows, w = frames[0].cols;
  auto out = torch::empty({static_cast<std::int64_t>(frames.size()), h, w, 3}, torch::kUInt8);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const cv::Mat& f = frames[i];
    if (f.type() != CV_8UC3 || f.rows != h || f.cols != w)
      throw Error(ErrorKind::Shape, "frames_to_tensor: frames must be equal-sized 8-bit RGB");
    const cv::Mat c = f.isContinuous() ? f : f.clone();
    std::memcpy(out[static_cast<std::int64_t>(i)].data_ptr(), c.data, static_cast<std::size_t>(h) * w * 3);
  }
  return out.permute({0, 3, 1, 2}).to(torch::kFloat32).div_(127.5).sub_(1.0).contiguous();
}

torch::Tensor frames_to_tensor(const FrameSequence& video) { return frames_to_tensor(video.frames()); }

std::vector<cv::Mat> tensor_to_frames(const torch::Tensor& t) {
  if (t.dim() != 4 || t.size(1) != 3) throw Error(ErrorKind::Shape, "tensor_to_frames: expected N x 3 x H x W");
  const auto u8 = ((t.detach().to(torch::kCPU, torch::kFloat32) + 1.0) * 127.5)
                      .round()
                      .clamp(0, 255)
                      .to(torch::kUInt8)
                      .permute({0, 2, 3, 1})
                      .contiguous();
  std::vector<cv::Mat> frames;
  const int h = static_cast<int>(t.size(2)), w = static_cast<int>(t.size(3));
  for (std::int64_t i = 0; i < u8.size(0); ++i) {
    cv::Mat m(h, w, CV_8UC3);
    std::memcpy(m.data, u8[i].data_ptr(), static_cast<std::size_t>(h) * w * 3);
    frames.push_back(m);
  }
  return frames;
}

double psnr(const torch::Tensor& a, const torch::Tensor& b) {
  const double mse = (a.to(torch::kFloat64) - b.to(torch::kFloat64)).pow(2).mean().item<double>();
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(4.0 / mse);
}

double psnr(const FrameSequence& a, const FrameSequence& b) { return psnr(frames_to_tensor(a), frames_to_tensor(b)); }

}  // namespace v2v
