#pragma once

#include <filesystem>
#include <string>

#include "v2v/frame_sequence.hpp"

namespace v2v {

struct VideoWriteOptions {
  // x264 constant rate factor; 0 is lossless in the coded colour space.
  int crf = 0;
  // "rgb24" codes RGB directly (bit-exact at crf 0); "yuv444p" or "yuv420p"
  // for wider player compatibility at the cost of colour quantization.
  std::string pixel_format = "rgb24";
};

// Reads a container file (mp4/mkv/avi/mov) or a directory of numbered image
// frames. Directories may carry an "fps.txt" holding "num/den" or a number.
FrameSequence load_video(const std::filesystem::path& path);

// Writes H.264 in an mp4 container when the extension is a known container;
// any other path is treated as an image-sequence directory of PNG frames.
void write_video(const FrameSequence& video, const std::filesystem::path& path,
                 const VideoWriteOptions& options = {});

bool is_container_path(const std::filesystem::path& path);

}  // namespace v2v
