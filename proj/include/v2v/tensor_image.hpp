#pragma once

#include <vector>

#include <opencv2/core.hpp>
#include <torch/torch.h>

#include "v2v/frame_sequence.hpp"

namespace v2v {

// N x 3 x H x W float32 in [-1, 1] (pixel / 127.5 - 1).
torch::Tensor frames_to_tensor(const FrameSequence& video);
torch::Tensor frames_to_tensor(const std::vector<cv::Mat>& frames);
// Inverse mapping with rounding and clamping.
std::vector<cv::Mat> tensor_to_frames(const torch::Tensor& t);

// PSNR in dB of two [-1, 1] tensors, peak-to-peak range 2.
double psnr(const torch::Tensor& a, const torch::Tensor& b);
double psnr(const FrameSequence& a, const FrameSequence& b);

}  // namespace v2v
