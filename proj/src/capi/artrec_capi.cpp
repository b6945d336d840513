#include "artrec.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>

#include "core/dataset.h"
#include "core/fit.h"
#include "core/io.h"
#include "core/synth.h"

namespace {

thread_local std::string g_last_error;

artrec_status status_of(const artrec::Error& e) {
  using artrec::Err;
  switch (e.code) {
    case Err::DivergedLoss:
      return ARTREC_E_NUMERIC;
    default:
      return ARTREC_E_INPUT;
  }
}

template <typename Fn>
artrec_status guarded(Fn&& fn) {
  try {
    fn();
    return ARTREC_OK;
  } catch (const artrec::Error& e) {
    g_last_error = e.what();
    return status_of(e);
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return ARTREC_E_INPUT;
  }
}

// Run manifest: config snapshot + dataset identity + seed, written once per
// run directory so a rerun is reproducible from the manifest alone.
void write_run_manifest(const std::string& out_dir, const std::string& subcommand,
                        const std::string& dataset_dir, uint64_t dataset_hash,
                        const artrec::config::KeyValues& kv) {
  std::ostringstream ss;
  ss << "subcommand = " << subcommand << "\n";
  ss << "dataset = " << dataset_dir << "\n";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)dataset_hash);
  ss << "dataset_hash = " << buf << "\n";
  ss << "version = artrec-0.1\n";
  ss << "# config snapshot\n" << kv.snapshot();
  artrec::io::write_text_file(out_dir + "/manifest.txt", ss.str());
}

}  // namespace

extern "C" {

struct artrec_model {
  artrec::fit::Model model;
};

const char* artrec_last_error(void) { return g_last_error.c_str(); }

artrec_status artrec_synth(const char* script, const char* out_dir, uint64_t* content_hash) {
  if (!script || !out_dir) {
    g_last_error = "artrec_synth: null argument";
    return ARTREC_E_USAGE;
  }
  return guarded([&] {
    artrec::synth::SceneScript s = artrec::synth::load_script(script);
    artrec::synth::export_dataset(s, out_dir);
    uint64_t h = artrec::dataset::dataset_content_hash(out_dir);
    if (content_hash) *content_hash = h;
  });
}

artrec_status artrec_fit(const char* dataset_dir, const char* config_path,
                         const char* config_overrides, const char* out_dir) {
  if (!dataset_dir || !out_dir) {
    g_last_error = "artrec_fit: null argument";
    return ARTREC_E_USAGE;
  }
  return guarded([&] {
    artrec::config::KeyValues kv = artrec::fit::default_config();
    if (config_path && config_path[0]) kv.parse_file(config_path);
    if (config_overrides && config_overrides[0])
      kv.parse_text(config_overrides, "<overrides>");
    artrec::dataset::Dataset ds = artrec::dataset::load_dataset(dataset_dir);
    std::filesystem::create_directories(out_dir);
    write_run_manifest(out_dir, "fit", dataset_dir,
                       artrec::dataset::dataset_content_hash(dataset_dir), kv);
    artrec::fit::Model m = artrec::fit::Model::build(ds, kv);
    artrec::fit::run_fit(m, ds, out_dir, false);
  });
}

artrec_status artrec_retarget(const char* checkpoint_path, const char* driving_dataset,
                              const char* config_overrides, const char* out_dir) {
  if (!checkpoint_path || !driving_dataset || !out_dir) {
    g_last_error = "artrec_retarget: null argument";
    return ARTREC_E_USAGE;
  }
  return guarded([&] {
    artrec::fit::Model trained = artrec::fit::Model::load(checkpoint_path);
    artrec::dataset::Dataset ds = artrec::dataset::load_dataset(driving_dataset);
    artrec::config::KeyValues kv = trained.kv;
    if (config_overrides && config_overrides[0])
      kv.parse_text(config_overrides, "<overrides>");
    std::filesystem::create_directories(out_dir);
    write_run_manifest(out_dir, "retarget", driving_dataset,
                       artrec::dataset::dataset_content_hash(driving_dataset), kv);
    artrec::fit::Model m = artrec::fit::Model::build(ds, kv);
    m.adopt_shared(trained.store);
    m.bounds = trained.bounds;
    m.grid = artrec::embed::refresh_grid(m.canon, m.store, m.bounds, m.cfg.grid_res);
    artrec::fit::run_fit(m, ds, out_dir, true);
  });
}

artrec_status artrec_model_load(const char* checkpoint_path, artrec_model** out) {
  if (!checkpoint_path || !out) {
    g_last_error = "artrec_model_load: null argument";
    return ARTREC_E_USAGE;
  }
  return guarded([&] {
    auto* handle = new artrec_model{artrec::fit::Model::load(checkpoint_path)};
    *out = handle;
  });
}

void artrec_model_free(artrec_model* m) { delete m; }

int artrec_model_num_frames(const artrec_model* m) { return m ? m->model.total_frames : 0; }
int artrec_model_num_videos(const artrec_model* m) { return m ? m->model.n_videos : 0; }

artrec_status artrec_extract(const artrec_model* m, int frame, int resolution,
                             int embed_colors, const char* ply_out) {
  if (!m || !ply_out) {
    g_last_error = "artrec_extract: null argument";
    return ARTREC_E_USAGE;
  }
  if (frame >= m->model.total_frames) {
    g_last_error = "artrec_extract: frame out of range";
    return ARTREC_E_USAGE;
  }
  return guarded([&] {
    int res = resolution > 0 ? resolution : m->model.cfg.eval_mesh_res;
    artrec::mesh::TriMesh mesh =
        frame < 0 ? artrec::fit::extract_canonical_mesh(m->model, res, embed_colors != 0)
                  : artrec::fit::extract_posed_mesh(m->model, frame, res, embed_colors != 0);
    artrec::mesh::write_ply(ply_out, mesh);
  });
}

artrec_status artrec_render(const artrec_model* m, int frame, double azimuth_deg,
                            const char* ppm_out, const char* pgm_out) {
  if (!m) {
    g_last_error = "artrec_render: null model";
    return ARTREC_E_USAGE;
  }
  if (frame < 0 || frame >= m->model.total_frames) {
    g_last_error = "artrec_render: frame out of range";
    return ARTREC_E_USAGE;
  }
  return guarded([&] {
    const artrec::fit::Model& model = m->model;
    artrec::warp::FramePose pose = model.make_pose(frame);
    if (azimuth_deg != 0.0) {
      // novel view: rotate the object about the camera-frame y axis
      double a = azimuth_deg * artrec::kPi / 180.0;
      artrec::Mat3 R = artrec::geom::rodrigues({0, a, 0});
      artrec::Vec3 pivot = pose.G_t;
      pose.G_R = R * pose.G_R;
      pose.G_t = R * (pose.G_t - pivot) + pivot;
    }
    int video = model.flat[frame].first;
    auto [rgb, opa] = artrec::fit::render_view(model, pose, model.store.value(model.env_ids[video]),
                                               model.camera(video),
                                               model.cfg.samples_per_ray, model.cfg.threads);
    if (ppm_out && ppm_out[0]) artrec::io::write_ppm(ppm_out, rgb);
    if (pgm_out && pgm_out[0]) artrec::io::write_pgm(pgm_out, opa);
  });
}

artrec_status artrec_export_bones(const artrec_model* m, int frame, const char* txt_out) {
  if (!m || !txt_out) {
    g_last_error = "artrec_export_bones: null argument";
    return ARTREC_E_USAGE;
  }
  if (frame < 0 || frame >= m->model.total_frames) {
    g_last_error = "artrec_export_bones: frame out of range";
    return ARTREC_E_USAGE;
  }
  return guarded([&] {
    artrec::io::write_text_file(txt_out, artrec::fit::bone_dump(m->model, frame));
  });
}

artrec_status artrec_render_flow(const artrec_model* m, int frame, int frame_to,
                                 const char* txt_out) {
  if (!m || !txt_out) {
    g_last_error = "artrec_render_flow: null argument";
    return ARTREC_E_USAGE;
  }
  if (frame < 0 || frame >= m->model.total_frames || frame_to < 0 ||
      frame_to >= m->model.total_frames) {
    g_last_error = "artrec_render_flow: frame out of range";
    return ARTREC_E_USAGE;
  }
  return guarded([&] {
    artrec::io::Image flow = artrec::fit::render_flow_image(
        m->model, frame, frame_to, m->model.cfg.samples_per_ray);
    artrec::io::write_flow_text(txt_out, flow);
  });
}

artrec_status artrec_eval(const artrec_model* m, const char* dataset_dir,
                          const char* report_out, double* mean_rms) {
  if (!m || !dataset_dir) {
    g_last_error = "artrec_eval: null argument";
    return ARTREC_E_USAGE;
  }
  return guarded([&] {
    artrec::dataset::Dataset ds = artrec::dataset::load_dataset(dataset_dir);
    artrec::fit::EvalReport rep = artrec::fit::eval_reconstruction(m->model, ds);
    std::ostringstream ss;
    ss.precision(9);
    for (const auto& f : rep.frames) {
      ss << "video=" << f.video << " frame=" << f.frame;
      if (f.failed)
        ss << " failed=1\n";
      else
        ss << " chamfer=" << f.chamfer << " rms=" << f.rms << " rms_cm=" << f.rms_cm << "\n";
    }
    ss << "mean chamfer=" << rep.mean_chamfer << " rms=" << rep.mean_rms
       << " rms_cm=" << rep.mean_rms_cm << " failed=" << rep.failed << "\n";
    if (report_out && report_out[0]) artrec::io::write_text_file(report_out, ss.str());
    if (mean_rms) *mean_rms = rep.mean_rms;
  });
}

uint64_t artrec_model_shared_checksum(const artrec_model* m) {
  if (!m) return 0;
  uint64_t h = 0;
  for (const char* p : {"mlp_sdf/", "mlp_col/", "mlp_psi/", "mlp_g/", "mlp_j/", "mlp_delta/",
                        "mlp_u/", "bones/", "beta/", "alpha_s/", "code/body_rest"})
    h = artrec::io::hash_combine(h, m->model.store.checksum(p));
  return h;
}

}  // extern "C"
