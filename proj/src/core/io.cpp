#include "core/io.h"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace artrec::io {

namespace {
uint8_t quantize(double v) {
  double c = std::clamp(v, 0.0, 1.0);
  return (uint8_t)std::lround(c * 255.0);
}
}  // namespace

void write_ppm(const std::string& path, const Image& rgb) {
  if (rgb.channels != 3) fail(Err::Io, "write_ppm expects 3 channels");
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(Err::Io, "cannot write " + path);
  os << "P6\n" << rgb.width << " " << rgb.height << "\n255\n";
  std::vector<uint8_t> row((size_t)rgb.width * 3);
  for (int y = 0; y < rgb.height; ++y) {
    for (int x = 0; x < rgb.width; ++x)
      for (int c = 0; c < 3; ++c) row[(size_t)x * 3 + c] = quantize(rgb.at(x, y, c));
    os.write((const char*)row.data(), (std::streamsize)row.size());
  }
}

namespace {
Image read_pnm(const std::string& path, const std::string& magic, int channels) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(Err::Io, "cannot open " + path);
  std::string m;
  is >> m;
  if (m != magic) fail(Err::Io, path + ": expected " + magic);
  auto next_token = [&is, &path]() {
    std::string t;
    for (;;) {
      if (!(is >> t)) fail(Err::Io, path + ": truncated header");
      if (t[0] == '#') { std::string line; std::getline(is, line); continue; }
      return t;
    }
  };
  int w = std::stoi(next_token());
  int h = std::stoi(next_token());
  int maxval = std::stoi(next_token());
  if (maxval != 255) fail(Err::Io, path + ": only maxval 255 supported");
  is.get();  // single whitespace after header
  Image img;
  img.width = w; img.height = h; img.channels = channels;
  img.data.resize((size_t)w * h * channels);
  std::vector<uint8_t> buf((size_t)w * h * channels);
  is.read((char*)buf.data(), (std::streamsize)buf.size());
  if (!is) fail(Err::Io, path + ": truncated pixel data");
  for (size_t i = 0; i < buf.size(); ++i) img.data[i] = buf[i] / 255.0;
  return img;
}
}  // namespace

Image read_ppm(const std::string& path) { return read_pnm(path, "P6", 3); }

void write_pgm(const std::string& path, const Image& gray) {
  if (gray.channels != 1) fail(Err::Io, "write_pgm expects 1 channel");
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(Err::Io, "cannot write " + path);
  os << "P5\n" << gray.width << " " << gray.height << "\n255\n";
  std::vector<uint8_t> row((size_t)gray.width);
  for (int y = 0; y < gray.height; ++y) {
    for (int x = 0; x < gray.width; ++x) row[x] = quantize(gray.at(x, y, 0));
    os.write((const char*)row.data(), (std::streamsize)row.size());
  }
}

Image read_pgm(const std::string& path) { return read_pnm(path, "P5", 1); }

void write_rawf(const std::string& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(Err::Io, "cannot write " + path);
  os << "f32 " << img.height << " " << img.width << " " << img.channels << "\n";
  std::vector<float> buf(img.data.size());
  for (size_t i = 0; i < buf.size(); ++i) buf[i] = (float)img.data[i];
  os.write((const char*)buf.data(), (std::streamsize)(buf.size() * sizeof(float)));
}

Image read_rawf(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(Err::Io, "cannot open " + path);
  std::string tag;
  int h, w, c;
  is >> tag >> h >> w >> c;
  if (tag != "f32") fail(Err::Io, path + ": bad raw float header");
  is.get();
  Image img;
  img.width = w; img.height = h; img.channels = c;
  std::vector<float> buf((size_t)w * h * c);
  is.read((char*)buf.data(), (std::streamsize)(buf.size() * sizeof(float)));
  if (!is) fail(Err::Io, path + ": truncated raw float data");
  img.data.resize(buf.size());
  for (size_t i = 0; i < buf.size(); ++i) img.data[i] = buf[i];
  return img;
}

void write_flow_text(const std::string& path, const Image& flow) {
  if (flow.channels != 2) fail(Err::Io, "write_flow_text expects 2 channels");
  std::ostringstream ss;
  ss << "flow " << flow.height << " " << flow.width << "\n";
  ss.precision(9);
  for (int y = 0; y < flow.height; ++y) {
    for (int x = 0; x < flow.width; ++x) {
      if (x) ss << " ";
      ss << flow.at(x, y, 0) << " " << flow.at(x, y, 1);
    }
    ss << "\n";
  }
  write_text_file(path, ss.str());
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(Err::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(Err::Io, "cannot write " + path);
  os << content;
  if (!os) fail(Err::Io, "short write " + path);
}

uint64_t hash_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(Err::Io, "cannot open " + path);
  uint64_t h = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (is.read(buf, sizeof buf) || is.gcount() > 0) {
    for (std::streamsize i = 0; i < is.gcount(); ++i) {
      h ^= (uint8_t)buf[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

uint64_t hash_combine(uint64_t a, uint64_t b) {
  return a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
}

}  // namespace artrec::io
