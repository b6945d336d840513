#pragma once

#include <string>
#include <vector>

#include "core/geom.h"
#include "core/io.h"

namespace artrec::dataset {

/// One time-stamped observation: RGB, silhouette, neighbor flow, feature
/// image, ground-truth root pose, and indexing.
struct FrameObs {
  io::Image rgb, sil, feat;
  io::Image flow[4];           // fw1, bw1, fw2, bw2
  bool has_flow[4] = {false, false, false, false};
  geom::SE3 gt_root;
  int video = 0;
  int index = 0;    // within video
  int global = 0;   // across the dataset
};

struct VideoData {
  geom::Camera cam;
  std::vector<FrameObs> frames;
};

struct Dataset {
  std::string path;
  std::string name;
  int width = 0, height = 0;
  double scale_cm = 100.0;
  std::vector<VideoData> videos;
  int total_frames = 0;
  std::vector<std::pair<int, int>> flat;  // global index -> (video, frame)

  const FrameObs& frame(int global) const {
    auto [v, f] = flat[global];
    return videos[v].frames[f];
  }
  std::string gt_cloud_path(int video, int frame) const;
  bool has_ground_truth() const;

  // Flow neighbor offsets matching the flow[] slots.
  static constexpr int kFlowOffset[4] = {+1, -1, +2, -2};
};

Dataset load_dataset(const std::string& dir);

// FNV hash over manifest + image payloads, stable across runs.
uint64_t dataset_content_hash(const std::string& dir);

}  // namespace artrec::dataset
