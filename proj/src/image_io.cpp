#include "metaopt/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace metaopt {

namespace {

// header tokens may be separated by whitespace or #-to-end-of-line comments
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok += static_cast<char>(c);
  }
  if (tok.empty()) throw std::runtime_error("ppm: truncated header");
  return tok;
}

int parse_dim(const std::string& tok, const char* what) {
  std::size_t used = 0;
  long v;
  try {
    v = std::stol(tok, &used);
  } catch (const std::exception&) {
    throw std::runtime_error(std::string("ppm: bad ") + what + " '" + tok + "'");
  }
  if (used != tok.size() || v <= 0)
    throw std::runtime_error(std::string("ppm: bad ") + what + " '" + tok + "'");
  return static_cast<int>(v);
}

}  // namespace

Tensor read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("ppm: cannot open " + path);
  if (next_token(in) != "P6") throw std::runtime_error("ppm: " + path + " is not binary P6");
  const int w = parse_dim(next_token(in), "width");
  const int h = parse_dim(next_token(in), "height");
  const int maxval = parse_dim(next_token(in), "maxval");
  if (maxval != 255) throw std::runtime_error("ppm: only maxval 255 is supported");
  // the single whitespace byte after maxval was consumed by the tokenizer

  std::vector<char> raw(static_cast<std::size_t>(3) * w * h);
  in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size()))
    throw std::runtime_error("ppm: " + path + " truncated pixel data");

  Tensor img({3, h, w});
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (std::int64_t p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c)
      img.data[static_cast<std::size_t>(c * plane + p)] =
          static_cast<double>(static_cast<unsigned char>(raw[static_cast<std::size_t>(3 * p + c)])) / 255.0;
  return img;
}

void write_ppm(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw std::invalid_argument("ppm: image must be [3,H,W]");
  const int h = static_cast<int>(image.dim(1));
  const int w = static_cast<int>(image.dim(2));

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("ppm: cannot write " + path);
  out << "P6\n" << w << ' ' << h << "\n255\n";

  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  std::vector<char> raw(static_cast<std::size_t>(3) * plane);
  for (std::int64_t p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c) {
      const double v = std::clamp(image.data[static_cast<std::size_t>(c * plane + p)], 0.0, 1.0);
      raw[static_cast<std::size_t>(3 * p + c)] =
          static_cast<char>(static_cast<unsigned char>(std::llround(v * 255.0)));
    }
  out.write(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (!out) throw std::runtime_error("ppm: short write on " + path);
}

}  // namespace metaopt
