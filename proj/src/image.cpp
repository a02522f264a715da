#include "epir/image.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <string>

#include "epir/error.hpp"

namespace epir {

GrayImage::GrayImage(int w, int h) : GrayImage(w, h, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h)) {}

GrayImage::GrayImage(int w, int h, std::vector<std::uint8_t> px)
    : width(w), height(h), pixels(std::move(px)) {
  if (w <= 0 || h <= 0) throw DataError("image dimensions must be positive");
  if (pixels.size() != static_cast<std::size_t>(w) * h) {
    throw DataError("pixel buffer size does not match " + std::to_string(w) + "x" + std::to_string(h));
  }
}

GrayImage rgb_to_gray(int width, int height, std::span<const std::uint8_t> rgb) {
  GrayImage out(width, height);
  if (rgb.size() != out.pixels.size() * 3) throw DataError("rgb buffer size mismatch");
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const double y = 0.299 * rgb[3 * i] + 0.587 * rgb[3 * i + 1] + 0.114 * rgb[3 * i + 2];
    out.pixels[i] = static_cast<std::uint8_t>(std::lround(std::min(255.0, y)));
  }
  return out;
}

namespace {

// Reads the next whitespace-separated header token, skipping '#' comments.
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
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

int parse_int(const std::string& tok, const std::filesystem::path& path) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw DataError("malformed PGM header in " + path.string());
  }
}

}  // namespace

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  if (next_token(in) != "P5") throw DataError("not a binary PGM (P5): " + path.string());
  const int w = parse_int(next_token(in), path);
  const int h = parse_int(next_token(in), path);
  const int maxval = parse_int(next_token(in), path);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) {
    throw DataError("unsupported PGM geometry or maxval in " + path.string());
  }
  std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (in.gcount() != static_cast<std::streamsize>(px.size())) {
    throw DataError("truncated PGM payload in " + path.string());
  }
  return GrayImage(w, h, std::move(px));
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace epir
