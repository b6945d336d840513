/* Public C API of the articulated reconstruction engine.
 *
 * All heavy state lives behind opaque handles; every call returns a status
 * code and the last error message is retrievable per thread. The CLI links
 * exclusively against this interface.
 */
#ifndef ARTREC_H
#define ARTREC_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum artrec_status {
  ARTREC_OK = 0,
  ARTREC_E_USAGE = 1,    /* bad arguments */
  ARTREC_E_INPUT = 2,    /* invalid inputs, I/O, config */
  ARTREC_E_NUMERIC = 3,  /* diverged optimization or numerical failure */
} artrec_status;

/* Message describing the most recent failure on this thread. */
const char* artrec_last_error(void);

/* Opaque trained (or in-progress) model state. */
typedef struct artrec_model artrec_model;

/* ---- dataset synthesis ---- */

/* Renders a scripted synthetic dataset into out_dir. script is a built-in
 * name (pendulum, quadruped, rigid-sphere) or a script file path. The
 * dataset content hash is written to *content_hash when non-NULL. */
artrec_status artrec_synth(const char* script, const char* out_dir, uint64_t* content_hash);

/* ---- optimization ---- */

/* Runs the optimization on a dataset directory. config_path may be NULL or
 * empty for defaults; config_overrides may be NULL or hold extra
 * "key = value" lines applied after the file. Emits checkpoints, metrics.log
 * and a run manifest into out_dir. */
artrec_status artrec_fit(const char* dataset_dir, const char* config_path,
                         const char* config_overrides, const char* out_dir);

/* Re-drives a trained model: loads checkpoint_path, freezes shared
 * parameters and optimizes per-frame codes against the driving dataset. */
artrec_status artrec_retarget(const char* checkpoint_path, const char* driving_dataset,
                              const char* config_overrides, const char* out_dir);

/* ---- trained-model queries ---- */

artrec_status artrec_model_load(const char* checkpoint_path, artrec_model** out);
void artrec_model_free(artrec_model* m);

int artrec_model_num_frames(const artrec_model* m);
int artrec_model_num_videos(const artrec_model* m);

/* Extracts the surface as ASCII PLY. frame < 0 extracts the rest pose;
 * otherwise vertices are forward-deformed to that frame. resolution <= 0
 * uses the configured default. embed_colors != 0 colors vertices by the
 * canonical embedding. */
artrec_status artrec_extract(const artrec_model* m, int frame, int resolution,
                             int embed_colors, const char* ply_out);

/* Renders the model from a frame's camera (PPM color + PGM opacity;
 * either path may be NULL). azimuth_deg rotates the camera around the
 * object for novel views. */
artrec_status artrec_render(const artrec_model* m, int frame, double azimuth_deg,
                            const char* ppm_out, const char* pgm_out);

/* Posed bones at one frame as text: one "cx cy cz ax ay az sx sy sz" line
 * per bone (center, angle-axis orientation, scales). */
artrec_status artrec_export_bones(const artrec_model* m, int frame, const char* txt_out);

/* Model optical flow from frame to frame_to (same video) as a 2-channel
 * float text grid. */
artrec_status artrec_render_flow(const artrec_model* m, int frame, int frame_to,
                                 const char* txt_out);

/* Per-frame Chamfer evaluation against dataset ground truth; writes a text
 * report and returns the mean RMS distance in canonical units. */
artrec_status artrec_eval(const artrec_model* m, const char* dataset_dir,
                          const char* report_out, double* mean_rms);

/* Order-insensitive digest of the shared (video-independent) parameters. */
uint64_t artrec_model_shared_checksum(const artrec_model* m);

#ifdef __cplusplus
}
#endif

#endif /* ARTREC_H */
