// Command-line front end. Links only the public C API.
#include <cinttypes>
#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "artrec.h"

namespace {

int finish(artrec_status st) {
  if (st != ARTREC_OK) std::fprintf(stderr, "error: %s\n", artrec_last_error());
  return (int)st;
}

std::string join_overrides(const std::vector<std::string>& kvs) {
  std::string out;
  for (const auto& kv : kvs) out += kv + "\n";
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"artrec: articulated implicit 3D reconstruction from multi-view sequences"};
  app.require_subcommand(1);

  // synth
  std::string synth_script, synth_out;
  auto* synth = app.add_subcommand("synth", "render a scripted synthetic dataset");
  synth->add_option("script", synth_script, "built-in name or script file")->required();
  synth->add_option("out", synth_out, "output dataset directory")->required();

  // fit
  std::string fit_dataset, fit_config, fit_out;
  std::vector<std::string> fit_set;
  std::vector<std::string> fit_ablate;
  int fit_threads = 0;
  auto* fit = app.add_subcommand("fit", "optimize a model on a dataset");
  fit->add_option("dataset", fit_dataset, "dataset directory")->required();
  fit->add_option("out", fit_out, "run output directory")->required();
  fit->add_option("--config", fit_config, "config file (key = value)");
  fit->add_option("--set", fit_set, "config override, e.g. --set 'iterations = 500'");
  fit->add_option("--ablate", fit_ablate,
                  "diagnostic switch: no-cefeat, no-flow, no-active, no-root-init, "
                  "no-mlp-delta, no-gauss-skin");
  fit->add_option("--threads", fit_threads, "parallelism cap (1 = determinism reference)");

  // extract
  std::string ex_ckpt, ex_out;
  int ex_frame = -1, ex_res = 0;
  bool ex_colors = false;
  auto* extract = app.add_subcommand("extract", "extract the surface mesh as PLY");
  extract->add_option("checkpoint", ex_ckpt)->required();
  extract->add_option("out", ex_out, "output .ply path")->required();
  extract->add_option("--frame", ex_frame, "pose the mesh at this frame (-1 = rest)");
  extract->add_option("--resolution", ex_res, "lattice resolution");
  extract->add_flag("--embed-colors", ex_colors, "color vertices by canonical embedding");
  std::string ex_bones;
  extract->add_option("--bones", ex_bones, "also dump posed bones to this text file");

  // render
  std::string rn_ckpt, rn_ppm, rn_pgm, rn_flow;
  int rn_frame = 0, rn_flow_to = -1;
  double rn_azimuth = 0;
  auto* rnder = app.add_subcommand("render", "render a frame (or novel view) to PPM/PGM");
  rnder->add_option("checkpoint", rn_ckpt)->required();
  rnder->add_option("--frame", rn_frame)->required();
  rnder->add_option("--out", rn_ppm, "color output (.ppm)");
  rnder->add_option("--opacity-out", rn_pgm, "opacity output (.pgm)");
  rnder->add_option("--azimuth", rn_azimuth, "novel-view rotation in degrees");
  rnder->add_option("--flow-out", rn_flow, "rendered flow output (text grid)");
  rnder->add_option("--flow-to", rn_flow_to, "flow target frame (same video)");

  // retarget
  std::string rt_ckpt, rt_dataset, rt_out;
  std::vector<std::string> rt_set;
  auto* retarget = app.add_subcommand("retarget",
                                      "drive a trained model with a new sequence "
                                      "(optimizes per-frame codes only)");
  retarget->add_option("checkpoint", rt_ckpt)->required();
  retarget->add_option("dataset", rt_dataset, "driving dataset directory")->required();
  retarget->add_option("out", rt_out, "run output directory")->required();
  retarget->add_option("--set", rt_set, "config override");

  // eval
  std::string ev_ckpt, ev_dataset, ev_report;
  auto* eval = app.add_subcommand("eval", "per-frame Chamfer report against ground truth");
  eval->add_option("checkpoint", ev_ckpt)->required();
  eval->add_option("dataset", ev_dataset)->required();
  eval->add_option("--report", ev_report, "report file path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : (int)ARTREC_E_USAGE;
  }

  if (synth->parsed()) {
    uint64_t hash = 0;
    artrec_status st = artrec_synth(synth_script.c_str(), synth_out.c_str(), &hash);
    if (st == ARTREC_OK) std::printf("dataset_hash %016" PRIx64 "\n", hash);
    return finish(st);
  }

  if (fit->parsed()) {
    std::vector<std::string> overrides = fit_set;
    for (const auto& a : fit_ablate) {
      if (a == "no-cefeat") overrides.push_back("ablate_cefeat = 1");
      else if (a == "no-flow") overrides.push_back("ablate_flow = 1");
      else if (a == "no-active") overrides.push_back("ablate_active = 1");
      else if (a == "no-root-init") overrides.push_back("ablate_root_init = 1");
      else if (a == "no-mlp-delta") overrides.push_back("ablate_mlp_delta = 1");
      else if (a == "no-gauss-skin") overrides.push_back("ablate_gauss_skin = 1");
      else {
        std::fprintf(stderr, "error: unknown ablation '%s'\n", a.c_str());
        return (int)ARTREC_E_USAGE;
      }
    }
    if (fit_threads > 0) overrides.push_back("threads = " + std::to_string(fit_threads));
    return finish(artrec_fit(fit_dataset.c_str(), fit_config.c_str(),
                             join_overrides(overrides).c_str(), fit_out.c_str()));
  }

  if (extract->parsed()) {
    artrec_model* m = nullptr;
    artrec_status st = artrec_model_load(ex_ckpt.c_str(), &m);
    if (st != ARTREC_OK) return finish(st);
    st = artrec_extract(m, ex_frame, ex_res, ex_colors ? 1 : 0, ex_out.c_str());
    if (st == ARTREC_OK && !ex_bones.empty())
      st = artrec_export_bones(m, ex_frame < 0 ? 0 : ex_frame, ex_bones.c_str());
    artrec_model_free(m);
    return finish(st);
  }

  if (rnder->parsed()) {
    artrec_model* m = nullptr;
    artrec_status st = artrec_model_load(rn_ckpt.c_str(), &m);
    if (st != ARTREC_OK) return finish(st);
    st = artrec_render(m, rn_frame, rn_azimuth, rn_ppm.empty() ? nullptr : rn_ppm.c_str(),
                       rn_pgm.empty() ? nullptr : rn_pgm.c_str());
    if (st == ARTREC_OK && !rn_flow.empty()) {
      if (rn_flow_to < 0) {
        std::fprintf(stderr, "error: --flow-out requires --flow-to\n");
        st = ARTREC_E_USAGE;
      } else {
        st = artrec_render_flow(m, rn_frame, rn_flow_to, rn_flow.c_str());
      }
    }
    artrec_model_free(m);
    return finish(st);
  }

  if (retarget->parsed()) {
    return finish(artrec_retarget(rt_ckpt.c_str(), rt_dataset.c_str(),
                                  join_overrides(rt_set).c_str(), rt_out.c_str()));
  }

  if (eval->parsed()) {
    artrec_model* m = nullptr;
    artrec_status st = artrec_model_load(ev_ckpt.c_str(), &m);
    if (st != ARTREC_OK) return finish(st);
    double mean_rms = 0;
    st = artrec_eval(m, ev_dataset.c_str(), ev_report.empty() ? nullptr : ev_report.c_str(),
                     &mean_rms);
    if (st == ARTREC_OK) std::printf("mean_rms %.9g\n", mean_rms);
    artrec_model_free(m);
    return finish(st);
  }

  return (int)ARTREC_E_USAGE;
}
