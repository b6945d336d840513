#include "core/dataset.h"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "core/config.h"

namespace artrec::dataset {

namespace fs = std::filesystem;

std::string Dataset::gt_cloud_path(int video, int frame) const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d", frame);
  return path + "/gt/cloud_v" + std::to_string(video) + "_f" + buf + ".ply";
}

bool Dataset::has_ground_truth() const {
  return !videos.empty() && fs::exists(gt_cloud_path(0, 0));
}

Dataset load_dataset(const std::string& dir) {
  if (!fs::exists(dir + "/manifest.txt"))
    fail(Err::Io, "not a dataset directory (missing manifest.txt): " + dir);
  config::KeyValues man;
  man.declare("name", "");
  man.declare("videos", "0");
  man.declare("width", "0");
  man.declare("height", "0");
  man.declare("scale_cm", "100");
  int probe_videos = 0;
  {
    // two-pass parse: frames_<v> keys depend on the video count
    std::istringstream is(io::read_text_file(dir + "/manifest.txt"));
    std::string line;
    while (std::getline(is, line))
      if (line.rfind("frames_", 0) == 0) ++probe_videos;
  }
  for (int v = 0; v < probe_videos; ++v) man.declare("frames_" + std::to_string(v), "0");
  man.parse_file(dir + "/manifest.txt");

  Dataset ds;
  ds.path = dir;
  ds.name = man.str("name");
  ds.width = man.integer("width");
  ds.height = man.integer("height");
  ds.scale_cm = man.num("scale_cm");
  int n_videos = man.integer("videos");
  if (n_videos <= 0 || n_videos != probe_videos)
    fail(Err::Io, "manifest video count mismatch in " + dir);

  const char* flow_names[4] = {"fw1", "bw1", "fw2", "bw2"};
  char buf[64];
  int global = 0;
  for (int v = 0; v < n_videos; ++v) {
    std::string vdir = dir + "/video_" + std::to_string(v);
    int n_frames = man.integer("frames_" + std::to_string(v));
    VideoData vd;
    std::istringstream poses(io::read_text_file(vdir + "/poses.txt"));
    poses >> vd.cam.fx >> vd.cam.fy >> vd.cam.cx >> vd.cam.cy;
    vd.cam.width = ds.width;
    vd.cam.height = ds.height;
    vd.cam.validate();
    for (int f = 0; f < n_frames; ++f) {
      std::snprintf(buf, sizeof buf, "%04d", f);
      FrameObs obs;
      obs.video = v;
      obs.index = f;
      obs.global = global++;
      obs.rgb = io::read_ppm(vdir + "/rgb_" + buf + ".ppm");
      obs.sil = io::read_pgm(vdir + "/sil_" + buf + ".pgm");
      obs.feat = io::read_rawf(vdir + "/feat_" + buf + ".raw");
      if (obs.rgb.width != ds.width || obs.rgb.height != ds.height ||
          obs.sil.width != ds.width || obs.feat.width != ds.width ||
          obs.feat.channels != 16)
        fail(Err::SizeMismatch, "frame image dimensions disagree with manifest: " + vdir);
      for (int k = 0; k < 4; ++k) {
        std::string fp = vdir + "/flow_" + std::string(flow_names[k]) + "_" + buf + ".raw";
        if (fs::exists(fp)) {
          obs.flow[k] = io::read_rawf(fp);
          obs.has_flow[k] = true;
          if (obs.flow[k].width != ds.width || obs.flow[k].channels != 2)
            fail(Err::SizeMismatch, "flow image dimensions disagree: " + fp);
        }
      }
      Mat34 g;
      for (int i = 0; i < 12; ++i)
        if (!(poses >> g.m[i])) fail(Err::Io, "truncated poses.txt in " + vdir);
      obs.gt_root = geom::from_mat(g);
      vd.frames.push_back(std::move(obs));
      ds.flat.push_back({v, f});
    }
    ds.videos.push_back(std::move(vd));
  }
  ds.total_frames = global;
  if (ds.total_frames == 0) fail(Err::Io, "dataset has no frames: " + dir);
  return ds;
}

uint64_t dataset_content_hash(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir))
    if (entry.is_regular_file()) files.push_back(entry.path().string());
  std::sort(files.begin(), files.end());
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& f : files) {
    std::string rel = fs::relative(f, dir).string();
    for (char c : rel) { h ^= (uint8_t)c; h *= 0x100000001b3ULL; }
    h = io::hash_combine(h, io::hash_file(f));
  }
  return h;
}

}  // namespace artrec::dataset
