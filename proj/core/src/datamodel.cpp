#include "mseg/datamodel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "mseg/errors.hpp"

namespace fs = std::filesystem;

namespace mseg::data {

std::string frame_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", index);
  return buf;
}

std::string image_path(const std::string& root, const std::string& seq, int index) {
  return root + "/" + seq + "/image/" + frame_name(index) + ".png";
}
std::string flow_path(const std::string& root, const std::string& seq, int index) {
  return root + "/" + seq + "/flow/" + frame_name(index) + ".flo";
}
std::string mask_path(const std::string& root, const std::string& seq, int index) {
  return root + "/" + seq + "/mask/" + frame_name(index) + ".png";
}
std::string flow_gt_path(const std::string& root, const std::string& seq, int index) {
  return root + "/" + seq + "/flow_gt/" + frame_name(index) + ".flo";
}

Frame preprocess_frame(const img::ImageU8& raw, double crop_top_fraction, int out_h, int out_w) {
  if (raw.channels != 3) throw FormatError("preprocess_frame: expects a 3-channel image");
  if (raw.h < 2) throw ArgumentError("preprocess_frame: image height must be >= 2");
  if (crop_top_fraction < 0.0 || crop_top_fraction >= 1.0)
    throw ArgumentError("preprocess_frame: crop_top_fraction must be in [0,1)");
  if (out_h < 1 || out_w < 1) throw ArgumentError("preprocess_frame: empty output size");

  const int top = static_cast<int>(std::lround(raw.h * crop_top_fraction));
  const int kept = raw.h - top;
  if (kept < 1) throw ArgumentError("preprocess_frame: crop removes the whole image");

  img::ImageU8 cropped(kept, raw.w, 3);
  std::copy(raw.pixels.begin() + static_cast<std::size_t>(top) * raw.w * 3, raw.pixels.end(),
            cropped.pixels.begin());
  img::ImageU8 resized = img::resize_bilinear(cropped, out_h, out_w);

  Frame f;
  f.image = img::to_chw(resized);
  return f;
}

MotionMask load_mask(const std::string& path) {
  img::ImageU8 im = img::read_png(path);
  if (im.channels != 1) throw FormatError("mask must be single-channel: " + path);
  MotionMask m(im.h, im.w);
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    const std::uint8_t v = im.pixels[i];
    if (v != 0 && v != 1 && v != 255)
      throw FormatError("mask value " + std::to_string(v) + " outside {0,1,255} in " + path);
    m.labels[i] = v;
  }
  return m;
}

void save_mask(const std::string& path, const MotionMask& m) {
  img::ImageU8 im(m.h, m.w, 1);
  std::copy(m.labels.begin(), m.labels.end(), im.pixels.begin());
  img::write_png(path, im);
}

SequenceSample load_sequence(const std::string& root, const std::string& seq, int end_index,
                             int T) {
  if (T < 1) throw ArgumentError("load_sequence: T must be >= 1");
  const int start = end_index - T + 1;
  if (start < 0)
    throw ArgumentError("load_sequence: window would start at negative index " +
                        std::to_string(start));

  // A frame missing in the middle of the window is a gap; missing at the end
  // of the dataset is a plain not-found.
  for (int i = start; i <= end_index; ++i) {
    if (fs::exists(image_path(root, seq, i))) continue;
    bool later_exists = false;
    for (int j = i + 1; j <= end_index; ++j)
      if (fs::exists(image_path(root, seq, j))) later_exists = true;
    if (later_exists)
      throw IntegrityError("frame " + std::to_string(i) + " missing inside window of " + seq);
    throw NotFoundError("missing " + image_path(root, seq, i));
  }

  SequenceSample s;
  s.sequence_id = seq;
  s.end_index = end_index;
  for (int i = start; i <= end_index; ++i) {
    img::ImageU8 raw = img::read_png(image_path(root, seq, i));
    if (raw.channels != 3) throw FormatError("frame not RGB: " + image_path(root, seq, i));
    Frame f;
    f.image = img::to_chw(raw);
    f.timestamp_index = i;
    f.sequence_id = seq;
    if (!s.frames.empty() &&
        (f.image.dim(1) != s.frames[0].image.dim(1) || f.image.dim(2) != s.frames[0].image.dim(2)))
      throw IntegrityError("frame size changes within " + seq);
    s.frames.push_back(std::move(f));
  }
  const int h = s.frames[0].image.dim(1), w = s.frames[0].image.dim(2);

  s.flows.emplace_back(h, w);  // designated zero field
  for (int i = start + 1; i <= end_index; ++i) {
    const std::string p = flow_path(root, seq, i);
    if (!fs::exists(p)) throw NotFoundError("missing " + p);
    flow::FlowField f = flow::read_flo(p);
    if (f.h != h || f.w != w) throw IntegrityError("flow size mismatch at " + p);
    s.flows.push_back(std::move(f));
  }

  const std::string mp = mask_path(root, seq, end_index);
  if (!fs::exists(mp)) throw NotFoundError("missing " + mp);
  s.target = load_mask(mp);
  if (s.target.h != h || s.target.w != w) throw IntegrityError("mask size mismatch at " + mp);

  bool all_masks = true;
  for (int i = start; i <= end_index; ++i)
    if (!fs::exists(mask_path(root, seq, i))) all_masks = false;
  if (all_masks) {
    for (int i = start; i <= end_index; ++i) {
      MotionMask m = load_mask(mask_path(root, seq, i));
      if (m.h != h || m.w != w) throw IntegrityError("mask size mismatch in " + seq);
      s.frame_targets.push_back(std::move(m));
    }
  }
  return s;
}

DatasetStats compute_stats(const std::vector<SequenceSample>& samples, int num_classes) {
  if (samples.empty()) throw ArgumentError("compute_stats: empty dataset");
  DatasetStats st;
  st.pixel_count_per_class.assign(num_classes, 0);
  for (const auto& s : samples) {
    for (std::uint8_t v : s.target.labels) {
      if (v == 255) continue;
      if (v >= num_classes)
        throw FormatError("label " + std::to_string(v) + " out of range in " + s.sequence_id);
      ++st.pixel_count_per_class[v];
    }
    ++st.num_samples;
  }
  return st;
}

std::vector<std::string> list_sequences(const std::string& root) {
  if (!fs::is_directory(root)) throw NotFoundError("dataset root not found: " + root);
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::is_directory(e.path() / "image"))
      out.push_back(e.path().filename().string());
  std::sort(out.begin(), out.end());
  return out;
}

int sequence_length(const std::string& root, const std::string& seq) {
  int n = 0;
  while (fs::exists(image_path(root, seq, n))) ++n;
  return n;
}

}  // namespace mseg::data
