#include "v2v/video_io.hpp"

#include <algorithm>
#include <fstream>
#include <memory>
#include <sstream>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

extern "C" {
#include <libavcodec/avcodec.h>
#include <libavformat/avformat.h>
#include <libavutil/imgutils.h>
#include <libavutil/opt.h>
#include <libavutil/pixdesc.h>
#include <libswscale/swscale.h>
}

#include "v2v/error.hpp"

namespace fs = std::filesystem;

namespace v2v {
namespace {

// libav chatter (encoder banners, stats) would drown the tool's JSON output;
// failures are reported through exceptions instead.
void quiet_libav() {
  static const bool once = [] {
    av_log_set_level(AV_LOG_ERROR);
    return true;
  }();
  (void)once;
}

struct FormatInputDeleter {
  void operator()(AVFormatContext* ctx) const { avformat_close_input(&ctx); }
};
struct FormatOutputDeleter {
  void operator()(AVFormatContext* ctx) const {
    if (ctx->pb && !(ctx->oformat->flags & AVFMT_NOFILE)) avio_closep(&ctx->pb);
    avformat_free_context(ctx);
  }
};
struct CodecDeleter {
  void operator()(AVCodecContext* ctx) const { avcodec_free_context(&ctx); }
};
struct FrameDeleter {
  void operator()(AVFrame* f) const { av_frame_free(&f); }
};
struct PacketDeleter {
  void operator()(AVPacket* p) const { av_packet_free(&p); }
};
struct SwsDeleter {
  void operator()(SwsContext* s) const { sws_freeContext(s); }
};

using FramePtr = std::unique_ptr<AVFrame, FrameDeleter>;
using PacketPtr = std::unique_ptr<AVPacket, PacketDeleter>;

std::string av_error(int code) {
  char buf[AV_ERROR_MAX_STRING_SIZE] = {};
  av_strerror(code, buf, sizeof(buf));
  return buf;
}

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

Rational parse_fps_file(const fs::path& file) {
  std::ifstream in(file);
  std::string text;
  std::getline(in, text);
  Rational fps;
  if (auto slash = text.find('/'); slash != std::string::npos) {
    fps.num = std::stoi(text.substr(0, slash));
    fps.den = std::stoi(text.substr(slash + 1));
  } else if (!text.empty()) {
    const double v = std::stod(text);
    fps.num = static_cast<int>(std::lround(v * 1000));
    fps.den = 1000;
  }
  return fps;
}

FrameSequence load_image_directory(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty())
    throw Error(ErrorKind::EmptyVideo, "no image frames in directory " + dir.string());
  std::vector<cv::Mat> frames;
  for (const auto& f : files) {
    cv::Mat bgr = cv::imread(f.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw Error(ErrorKind::Decode, "cannot decode image " + f.string());
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    frames.push_back(rgb);
  }
  Rational fps;
  if (fs::exists(dir / "fps.txt")) fps = parse_fps_file(dir / "fps.txt");
  return FrameSequence(std::move(frames), fps);
}

void write_image_directory(const FrameSequence& video, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create directory " + dir.string() + ": " + ec.message());
  for (std::size_t i = 0; i < video.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%05zu.png", i);
    cv::Mat bgr;
    cv::cvtColor(video[i], bgr, cv::COLOR_RGB2BGR);
    if (!cv::imwrite((dir / name).string(), bgr))
      throw Error(ErrorKind::Io, "cannot write frame " + (dir / name).string());
  }
  std::ofstream fps(dir / "fps.txt");
  fps << video.fps().num << "/" << video.fps().den << "\n";
  if (!fps) throw Error(ErrorKind::Io, "cannot write " + (dir / "fps.txt").string());
}

FrameSequence load_container(const fs::path& path) {
  const std::string name = path.string();
  AVFormatContext* raw = nullptr;
  if (int rc = avformat_open_input(&raw, name.c_str(), nullptr, nullptr); rc < 0)
    throw Error(ErrorKind::Decode, "cannot open " + name + ": " + av_error(rc));
  std::unique_ptr<AVFormatContext, FormatInputDeleter> fmt(raw);
  if (avformat_find_stream_info(fmt.get(), nullptr) < 0)
    throw Error(ErrorKind::Decode, "no stream info in " + name);

  AVCodec* codec = nullptr;
  const int stream_index = av_find_best_stream(fmt.get(), AVMEDIA_TYPE_VIDEO, -1, -1, &codec, 0);
  if (stream_index < 0 || codec == nullptr)
    throw Error(ErrorKind::Decode, "no decodable video stream in " + name);
  AVStream* stream = fmt->streams[stream_index];

  std::unique_ptr<AVCodecContext, CodecDeleter> dec(avcodec_alloc_context3(codec));
  avcodec_parameters_to_context(dec.get(), stream->codecpar);
  dec->thread_count = 1;
  if (avcodec_open2(dec.get(), codec, nullptr) < 0)
    throw Error(ErrorKind::Decode, "cannot open decoder for " + name);

  AVRational rate = stream->avg_frame_rate;
  if (rate.num <= 0 || rate.den <= 0) rate = stream->r_frame_rate;
  Rational fps{rate.num > 0 ? rate.num : 25, rate.den > 0 ? rate.den : 1};

  std::vector<cv::Mat> frames;
  std::unique_ptr<SwsContext, SwsDeleter> sws;
  FramePtr frame(av_frame_alloc());
  PacketPtr packet(av_packet_alloc());

  auto drain = [&]() {
    while (true) {
      int rc = avcodec_receive_frame(dec.get(), frame.get());
      if (rc == AVERROR(EAGAIN) || rc == AVERROR_EOF) return;
      if (rc < 0) throw Error(ErrorKind::Decode, "decode failure in " + name + ": " + av_error(rc));
      if (!sws) {
        sws.reset(sws_getContext(frame->width, frame->height,
                                 static_cast<AVPixelFormat>(frame->format), frame->width,
                                 frame->height, AV_PIX_FMT_RGB24,
                                 SWS_BICUBIC | SWS_ACCURATE_RND | SWS_FULL_CHR_H_INT, nullptr,
                                 nullptr, nullptr));
        if (!sws) throw Error(ErrorKind::Decode, "unsupported pixel format in " + name);
        const AVPixFmtDescriptor* desc = av_pix_fmt_desc_get(static_cast<AVPixelFormat>(frame->format));
        if (desc && !(desc->flags & AV_PIX_FMT_FLAG_RGB)) {
          const int* coeffs = sws_getCoefficients(SWS_CS_ITU601);
          const int src_full = frame->color_range == AVCOL_RANGE_JPEG ? 1 : 0;
          sws_setColorspaceDetails(sws.get(), coeffs, src_full, coeffs, 1, 0, 1 << 16, 1 << 16);
        }
      }
      cv::Mat rgb(frame->height, frame->width, CV_8UC3);
      uint8_t* dst[1] = {rgb.data};
      int dst_stride[1] = {static_cast<int>(rgb.step)};
      sws_scale(sws.get(), frame->data, frame->linesize, 0, frame->height, dst, dst_stride);
      frames.push_back(rgb);
      av_frame_unref(frame.get());
    }
  };

  while (av_read_frame(fmt.get(), packet.get()) >= 0) {
    if (packet->stream_index == stream_index) {
      if (int rc = avcodec_send_packet(dec.get(), packet.get()); rc < 0 && rc != AVERROR(EAGAIN))
        throw Error(ErrorKind::Decode, "corrupt packet in " + name + ": " + av_error(rc));
      drain();
    }
    av_packet_unref(packet.get());
  }
  avcodec_send_packet(dec.get(), nullptr);
  drain();

  if (frames.empty()) throw Error(ErrorKind::EmptyVideo, "video has zero frames: " + name);
  return FrameSequence(std::move(frames), fps);
}

void write_container(const FrameSequence& video, const fs::path& path,
                     const VideoWriteOptions& options) {
  const std::string name = path.string();
  if (video.width() % 2 != 0 || video.height() % 2 != 0) {
    if (options.pixel_format == "yuv420p")
      throw Error(ErrorKind::Shape, "yuv420p output needs even frame dimensions");
  }
  AVFormatContext* raw = nullptr;
  if (avformat_alloc_output_context2(&raw, nullptr, nullptr, name.c_str()) < 0 || !raw)
    throw Error(ErrorKind::Io, "cannot create container for " + name);
  std::unique_ptr<AVFormatContext, FormatOutputDeleter> fmt(raw);

  const AVPixelFormat pix = av_get_pix_fmt(options.pixel_format.c_str());
  if (pix == AV_PIX_FMT_NONE)
    throw Error(ErrorKind::Config, "unknown pixel format " + options.pixel_format);
  const bool rgb = pix == AV_PIX_FMT_RGB24 || pix == AV_PIX_FMT_BGR24 || pix == AV_PIX_FMT_BGR0;
  // RGB H.264 (High 4:4:4) is the only bit-exact path; YUV clips saturated
  // colours by one level even at crf 0.
  const AVCodec* codec = avcodec_find_encoder_by_name(rgb ? "libx264rgb" : "libx264");
  if (!codec && !rgb) codec = avcodec_find_encoder(AV_CODEC_ID_H264);
  if (!codec) throw Error(ErrorKind::Io, "no H.264 encoder available");

  AVStream* stream = avformat_new_stream(fmt.get(), nullptr);
  std::unique_ptr<AVCodecContext, CodecDeleter> enc(avcodec_alloc_context3(codec));
  enc->width = video.width();
  enc->height = video.height();
  enc->pix_fmt = pix;
  enc->time_base = AVRational{video.fps().den, video.fps().num};
  enc->framerate = AVRational{video.fps().num, video.fps().den};
  enc->gop_size = 12;
  enc->thread_count = 1;
  enc->color_range = AVCOL_RANGE_JPEG;
  if (fmt->oformat->flags & AVFMT_GLOBALHEADER) enc->flags |= AV_CODEC_FLAG_GLOBAL_HEADER;
  av_opt_set(enc->priv_data, "preset", "medium", 0);
  av_opt_set(enc->priv_data, "crf", std::to_string(options.crf).c_str(), 0);
  if (avcodec_open2(enc.get(), codec, nullptr) < 0)
    throw Error(ErrorKind::Io, "cannot open H.264 encoder for " + name);
  avcodec_parameters_from_context(stream->codecpar, enc.get());
  stream->time_base = enc->time_base;
  stream->avg_frame_rate = enc->framerate;

  if (!(fmt->oformat->flags & AVFMT_NOFILE)) {
    if (int rc = avio_open(&fmt->pb, name.c_str(), AVIO_FLAG_WRITE); rc < 0)
      throw Error(ErrorKind::Io, "cannot open " + name + " for writing: " + av_error(rc));
  }
  if (avformat_write_header(fmt.get(), nullptr) < 0)
    throw Error(ErrorKind::Io, "cannot write header to " + name);

  std::unique_ptr<SwsContext, SwsDeleter> sws(sws_getContext(
      video.width(), video.height(), AV_PIX_FMT_RGB24, video.width(), video.height(), pix,
      SWS_BICUBIC | SWS_ACCURATE_RND | SWS_FULL_CHR_H_INT, nullptr, nullptr, nullptr));
  // Full-range YUV avoids the 16..235 quantization loss.
  if (!rgb) {
    const int* coeffs = sws_getCoefficients(SWS_CS_ITU601);
    sws_setColorspaceDetails(sws.get(), coeffs, 1, coeffs, 1, 0, 1 << 16, 1 << 16);
  }

  FramePtr frame(av_frame_alloc());
  frame->format = pix;
  frame->width = video.width();
  frame->height = video.height();
  frame->color_range = AVCOL_RANGE_JPEG;
  if (av_frame_get_buffer(frame.get(), 0) < 0) throw Error(ErrorKind::Io, "frame allocation failed");
  PacketPtr packet(av_packet_alloc());

  auto flush_packets = [&]() {
    while (true) {
      int rc = avcodec_receive_packet(enc.get(), packet.get());
      if (rc == AVERROR(EAGAIN) || rc == AVERROR_EOF) return;
      if (rc < 0) throw Error(ErrorKind::Io, "encode failure for " + name);
      av_packet_rescale_ts(packet.get(), enc->time_base, stream->time_base);
      packet->stream_index = stream->index;
      if (av_interleaved_write_frame(fmt.get(), packet.get()) < 0)
        throw Error(ErrorKind::Io, "write failure for " + name);
    }
  };

  for (std::size_t i = 0; i < video.size(); ++i) {
    av_frame_make_writable(frame.get());
    const cv::Mat& rgb = video[i];
    const cv::Mat cont = rgb.isContinuous() ? rgb : rgb.clone();
    const uint8_t* src[1] = {cont.data};
    int src_stride[1] = {static_cast<int>(cont.step)};
    sws_scale(sws.get(), src, src_stride, 0, video.height(), frame->data, frame->linesize);
    frame->pts = static_cast<int64_t>(i);
    if (avcodec_send_frame(enc.get(), frame.get()) < 0)
      throw Error(ErrorKind::Io, "encode failure for " + name);
    flush_packets();
  }
  avcodec_send_frame(enc.get(), nullptr);
  flush_packets();
  if (av_write_trailer(fmt.get()) < 0) throw Error(ErrorKind::Io, "cannot finalize " + name);
}

}  // namespace

bool is_container_path(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  return ext == ".mp4" || ext == ".mkv" || ext == ".avi" || ext == ".mov";
}

FrameSequence load_video(const fs::path& path) {
  std::error_code ec;
  if (!fs::exists(path, ec)) throw Error(ErrorKind::Decode, "no such video: " + path.string());
  if (fs::is_directory(path, ec)) return load_image_directory(path);
  quiet_libav();
  return load_container(path);
}

void write_video(const FrameSequence& video, const fs::path& path,
                 const VideoWriteOptions& options) {
  if (video.empty()) throw Error(ErrorKind::EmptyVideo, "refusing to write an empty video");
  if (!is_container_path(path)) {
    write_image_directory(video, path);
    return;
  }
  quiet_libav();
  if (path.has_parent_path()) {
    std::error_code ec;
    if (!fs::is_directory(path.parent_path(), ec))
      throw Error(ErrorKind::Io, "output directory does not exist: " + path.parent_path().string());
  }
  write_container(video, path, options);
}

}  // namespace v2v
