#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mseg/flowio.hpp"
#include "mseg/image.hpp"
#include "mseg/tensor.hpp"

namespace mseg::data {

struct Frame {
  Tensor image;  // (3,H,W), values in [0,1]
  int timestamp_index = 0;
  std::string sequence_id;
};

// Labels: 0 = static/background, 1 = moving, 255 = ignore.
struct MotionMask {
  int h = 0, w = 0;
  std::vector<std::uint8_t> labels;

  MotionMask() = default;
  MotionMask(int h_, int w_) : h(h_), w(w_), labels(static_cast<std::size_t>(h_) * w_, 0) {}

  std::uint8_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * w + x]; }
  std::uint8_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * w + x]; }
};

struct SequenceSample {
  std::vector<Frame> frames;            // exactly T, consecutive timestamps
  std::vector<flow::FlowField> flows;   // exactly T; flows[0] is the zero field
  MotionMask target;                    // mask of the last frame
  std::vector<MotionMask> frame_targets;  // all T when every mask exists, else empty
  std::string sequence_id;
  int end_index = 0;
};

struct DatasetStats {
  std::vector<std::int64_t> pixel_count_per_class;
  std::int64_t num_samples = 0;
};

// Layout: root/<sequence_id>/image/<index>.png, flow/<index>.flo,
// mask/<index>.png, and optionally flow_gt/<index>.flo (exact flow emitted by
// the synthetic generator). Indices are zero-padded to six digits.
std::string frame_name(int index);
std::string image_path(const std::string& root, const std::string& seq, int index);
std::string flow_path(const std::string& root, const std::string& seq, int index);
std::string mask_path(const std::string& root, const std::string& seq, int index);
std::string flow_gt_path(const std::string& root, const std::string& seq, int index);

// Crops the top crop_top_fraction of rows, resizes to out_h x out_w, and
// scales to [0,1].
Frame preprocess_frame(const img::ImageU8& raw, double crop_top_fraction, int out_h, int out_w);

MotionMask load_mask(const std::string& path);
void save_mask(const std::string& path, const MotionMask& m);

SequenceSample load_sequence(const std::string& root, const std::string& seq, int end_index,
                             int T);

DatasetStats compute_stats(const std::vector<SequenceSample>& samples, int num_classes = 2);

// Sorted directory names under root that contain an image/ subdirectory.
std::vector<std::string> list_sequences(const std::string& root);
// Number of consecutive frames starting at index 0.
int sequence_length(const std::string& root, const std::string& seq);

}  // namespace mseg::data
