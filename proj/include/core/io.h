#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/common.h"

namespace artrec::io {

struct Image {
  int width = 0, height = 0, channels = 0;
  std::vector<double> data;  // row-major, [y][x][c]

  double& at(int x, int y, int c) { return data[(size_t)(y * width + x) * channels + c]; }
  double at(int x, int y, int c) const { return data[(size_t)(y * width + x) * channels + c]; }
};

// Binary PPM (P6) / PGM (P5), maxval 255; values clamped from [0,1].
void write_ppm(const std::string& path, const Image& rgb);
Image read_ppm(const std::string& path);
void write_pgm(const std::string& path, const Image& gray);
Image read_pgm(const std::string& path);

// Raw float32 array with a one-line text header: "f32 <H> <W> <C>\n".
void write_rawf(const std::string& path, const Image& img);
Image read_rawf(const std::string& path);

// 2-channel float flow as text grid: header line "flow <H> <W>", then rows.
void write_flow_text(const std::string& path, const Image& flow);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// FNV-1a over file bytes; used for dataset content hashes in run manifests.
uint64_t hash_file(const std::string& path);
uint64_t hash_combine(uint64_t a, uint64_t b);

}  // namespace artrec::io
