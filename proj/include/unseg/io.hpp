#pragma once

// Raster and model persistence. PNG goes through libpng; PPM/PGM (binary
// P5/P6 and ASCII P2/P3) is handled here. Label maps are stored losslessly
// as 16-bit single-channel rasters.

#include <png.h>

#include <algorithm>
#include <array>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "unseg/labels.hpp"
#include "unseg/losses.hpp"
#include "unseg/pipeline.hpp"
#include "unseg/segnet.hpp"

namespace unseg::io {

namespace fs = std::filesystem;

/// Decoded raster: interleaved samples, channels ∈ {1,2,3,4}.
struct Raster {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::uint32_t max_value = 255;  // 255, 65535, or the PNM maxval
  std::vector<std::uint16_t> samples;

  std::uint16_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return samples[(y * width + x) * channels + c];
  }
};

inline std::vector<unsigned char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return std::vector<unsigned char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline void write_file(const fs::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline bool has_extension(const fs::path& p, std::initializer_list<const char*> exts) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return std::any_of(exts.begin(), exts.end(), [&](const char* x) { return e == x; });
}

// ---------------------------------------------------------------------------
// PNG
// ---------------------------------------------------------------------------

namespace detail {

struct PngMemReader {
  const std::vector<unsigned char>* bytes;
  std::size_t pos;
};

inline void png_mem_read(png_structp png, png_bytep out, png_size_t n) {
  auto* r = static_cast<PngMemReader*>(png_get_io_ptr(png));
  if (r->pos + n > r->bytes->size()) png_error(png, "unexpected end of PNG data");
  std::memcpy(out, r->bytes->data() + r->pos, n);
  r->pos += n;
}

inline void png_mem_write(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<unsigned char>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}

inline void png_mem_flush(png_structp) {}

inline void png_quiet_warning(png_structp, png_const_charp) {}

}  // namespace detail

inline Raster decode_png(const std::vector<unsigned char>& bytes, const std::string& name) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, detail::png_quiet_warning);
  if (!png) throw IoError("libpng init failed for '" + name + "'");
  png_infop info = png_create_info_struct(png);
  Raster r;
  std::vector<png_bytep> rows;
  std::vector<unsigned char> pixels;
  detail::PngMemReader reader{&bytes, 0};
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("'" + name + "' is not a readable PNG file");
  }
  png_set_read_fn(png, &reader, detail::png_mem_read);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_read_update_info(png, info);

  r.width = png_get_image_width(png, info);
  r.height = png_get_image_height(png, info);
  r.channels = png_get_channels(png, info);
  const int depth = png_get_bit_depth(png, info);
  r.max_value = depth == 16 ? 65535u : 255u;
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  pixels.resize(rowbytes * r.height);
  rows.resize(r.height);
  for (std::size_t y = 0; y < r.height; ++y) rows[y] = pixels.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t count = r.width * r.height * r.channels;
  r.samples.resize(count);
  for (std::size_t y = 0; y < r.height; ++y)
    for (std::size_t i = 0; i < r.width * r.channels; ++i) {
      const unsigned char* row = pixels.data() + y * rowbytes;
      r.samples[y * r.width * r.channels + i] =
          depth == 16 ? static_cast<std::uint16_t>((row[2 * i] << 8) | row[2 * i + 1]) : row[i];
    }
  return r;
}

/// Encodes 1- or 3-channel samples as an 8- or 16-bit PNG. No time or text
/// chunks are written, so identical input gives identical bytes.
inline std::vector<unsigned char> encode_png(const Raster& r, int depth) {
  if (r.channels != 1 && r.channels != 3) throw InvalidArgument("encode_png: only 1 or 3 channels supported");
  std::vector<unsigned char> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, detail::png_quiet_warning);
  if (!png) throw IoError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  const std::size_t bps = depth == 16 ? 2 : 1;
  const std::size_t rowbytes = r.width * r.channels * bps;
  std::vector<unsigned char> pixels(rowbytes * r.height);
  for (std::size_t i = 0; i < r.samples.size(); ++i) {
    if (bps == 2) {
      pixels[2 * i] = static_cast<unsigned char>(r.samples[i] >> 8);
      pixels[2 * i + 1] = static_cast<unsigned char>(r.samples[i] & 0xFF);
    } else {
      pixels[i] = static_cast<unsigned char>(r.samples[i]);
    }
  }
  std::vector<png_bytep> rows(r.height);
  for (std::size_t y = 0; y < r.height; ++y) rows[y] = pixels.data() + y * rowbytes;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encoding failed");
  }
  png_set_write_fn(png, &out, detail::png_mem_write, detail::png_mem_flush);
  png_set_IHDR(png, info, static_cast<png_uint_32>(r.width), static_cast<png_uint_32>(r.height), depth,
               r.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

// ---------------------------------------------------------------------------
// PNM (P2/P3/P5/P6)
// ---------------------------------------------------------------------------

inline Raster decode_pnm(const std::vector<unsigned char>& bytes, const std::string& name) {
  std::size_t pos = 0;
  auto fail = [&](const std::string& why) -> Raster { throw IoError("'" + name + "': " + why); };
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&]() -> std::uint64_t {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) {
      fail("malformed PNM header");
    }
    std::uint64_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      if (v > (1u << 30)) fail("PNM header value out of range");
    }
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P') return fail("not a PNM file");
  const char kind = static_cast<char>(bytes[1]);
  if (kind != '2' && kind != '3' && kind != '5' && kind != '6') return fail("unsupported PNM variant P" + std::string(1, kind));
  pos = 2;
  Raster r;
  r.channels = (kind == '3' || kind == '6') ? 3 : 1;
  r.width = read_uint();
  r.height = read_uint();
  const auto maxval = read_uint();
  if (maxval == 0 || maxval > 65535) return fail("PNM maxval must be in [1, 65535]");
  r.max_value = static_cast<std::uint32_t>(maxval);
  const std::size_t count = r.width * r.height * r.channels;
  r.samples.resize(count);
  if (kind == '5' || kind == '6') {
    ++pos;  // single whitespace after maxval
    const std::size_t bps = maxval > 255 ? 2 : 1;
    if (bytes.size() < pos + count * bps) return fail("truncated PNM pixel data");
    for (std::size_t i = 0; i < count; ++i)
      r.samples[i] = bps == 2 ? static_cast<std::uint16_t>((bytes[pos + 2 * i] << 8) | bytes[pos + 2 * i + 1])
                              : bytes[pos + i];
  } else {
    for (std::size_t i = 0; i < count; ++i) r.samples[i] = static_cast<std::uint16_t>(read_uint());
  }
  for (auto s : r.samples)
    if (s > maxval) return fail("sample exceeds maxval");
  return r;
}

inline std::vector<unsigned char> encode_pnm(const Raster& r) {
  if (r.channels != 1 && r.channels != 3) throw InvalidArgument("encode_pnm: only 1 or 3 channels supported");
  std::ostringstream hdr;
  hdr << (r.channels == 3 ? "P6" : "P5") << '\n' << r.width << ' ' << r.height << '\n' << r.max_value << '\n';
  const std::string h = hdr.str();
  std::vector<unsigned char> out(h.begin(), h.end());
  for (auto s : r.samples) {
    if (r.max_value > 255) out.push_back(static_cast<unsigned char>(s >> 8));
    out.push_back(static_cast<unsigned char>(s & 0xFF));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generic raster entry points
// ---------------------------------------------------------------------------

inline Raster read_raster(const fs::path& path) {
  const auto bytes = read_file(path);
  static constexpr std::array<unsigned char, 8> kPngSig{0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  if (bytes.size() >= 8 && std::equal(kPngSig.begin(), kPngSig.end(), bytes.begin()))
    return decode_png(bytes, path.string());
  if (bytes.size() >= 2 && bytes[0] == 'P') return decode_pnm(bytes, path.string());
  throw IoError("'" + path.string() + "': unsupported raster format (expected PNG or PPM/PGM)");
}

/// Writes PNM for .ppm/.pgm/.pnm paths, PNG otherwise.
inline void write_raster(const fs::path& path, const Raster& r) {
  if (has_extension(path, {".ppm", ".pgm", ".pnm"})) write_file(path, encode_pnm(r));
  else write_file(path, encode_png(r, r.max_value > 255 ? 16 : 8));
}

/// RGB (or grey replicated to RGB) scaled by the format maximum into [0, 1].
inline Image load_image(const fs::path& path) {
  const Raster r = read_raster(path);
  if (r.width == 0 || r.height == 0) throw IoError("'" + path.string() + "': empty image");
  Image img({3, r.height, r.width});
  const double scale = 1.0 / static_cast<double>(r.max_value);
  const bool grey = r.channels < 3;
  for (std::size_t y = 0; y < r.height; ++y)
    for (std::size_t x = 0; x < r.width; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        img.at(c, y, x) = static_cast<float>(r.at(y, x, grey ? 0 : c) * scale);
  return img;
}

/// Stores an image as 8-bit RGB (values rounded to the nearest 1/255).
inline void save_image(const fs::path& path, const Image& img) {
  require_image_shape(img);
  Raster r{img.dim(2), img.dim(1), 3, 255, {}};
  r.samples.resize(r.width * r.height * 3);
  for (std::size_t y = 0; y < r.height; ++y)
    for (std::size_t x = 0; x < r.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(static_cast<double>(img.at(c, y, x)), 0.0, 1.0);
        r.samples[(y * r.width + x) * 3 + c] = static_cast<std::uint16_t>(std::lround(v * 255.0));
      }
  write_raster(path, r);
}

// ---------------------------------------------------------------------------
// Label maps and scribbles
// ---------------------------------------------------------------------------

inline constexpr std::int32_t kUnscribbled = 255;

/// Scribble raster: value 255 is "not scribbled", 0..q−1 are scribble labels.
inline Scribbles load_scribbles(const fs::path& path, int q) {
  const Raster r = read_raster(path);
  if (r.channels != 1)
    throw InvalidArgument("'" + path.string() + "': scribble raster must be single-channel, has " +
                          std::to_string(r.channels));
  Scribbles s{Mask(r.height, r.width), LabelMap(r.height, r.width)};
  std::ostringstream bad;
  std::size_t nbad = 0;
  for (std::size_t y = 0; y < r.height; ++y)
    for (std::size_t x = 0; x < r.width; ++x) {
      const auto v = static_cast<std::int32_t>(r.at(y, x, 0));
      if (v == kUnscribbled) continue;
      if (v >= q) {
        if (nbad < 10) bad << (nbad ? ", " : "") << "(" << y << "," << x << ")=" << v;
        ++nbad;
        continue;
      }
      s.mask.set(y, x);
      s.labels(y, x) = v;
    }
  if (nbad)
    throw InvalidArgument("'" + path.string() + "': " + std::to_string(nbad) + " scribble value(s) >= q=" +
                          std::to_string(q) + ": " + bad.str() + (nbad > 10 ? ", ..." : ""));
  return s;
}

/// Deterministic label colour: h = (ℓ+1)·2654435761 mod 2³², h ^= h >> 15,
/// RGB = (h>>16 & 255, h>>8 & 255, h & 255).
inline std::array<std::uint8_t, 3> palette_color(std::int32_t label) {
  std::uint32_t h = (static_cast<std::uint32_t>(label) + 1u) * 2654435761u;
  h ^= h >> 15;
  return {static_cast<std::uint8_t>((h >> 16) & 0xFF), static_cast<std::uint8_t>((h >> 8) & 0xFF),
          static_cast<std::uint8_t>(h & 0xFF)};
}

inline void save_labelmap_raw(const fs::path& path, const LabelMap& labels) {
  Raster r{labels.width, labels.height, 1, 65535, {}};
  r.samples.reserve(labels.size());
  for (auto v : labels.data) {
    if (v < 0 || v > 65535) throw InvalidArgument("save_labelmap: label " + std::to_string(v) + " outside [0, 65535]");
    r.samples.push_back(static_cast<std::uint16_t>(v));
  }
  write_raster(path, r);
}

inline void save_labelmap_viz(const fs::path& path, const LabelMap& labels) {
  Raster r{labels.width, labels.height, 3, 255, {}};
  r.samples.reserve(labels.size() * 3);
  for (auto v : labels.data)
    for (auto c : palette_color(v)) r.samples.push_back(c);
  write_raster(path, r);
}

/// Raw 16-bit IDs to `raw_path`; palette rendering to `viz_path` if non-empty.
inline void save_labelmap(const LabelMap& labels, const fs::path& raw_path, const fs::path& viz_path = {}) {
  save_labelmap_raw(raw_path, labels);
  if (!viz_path.empty()) save_labelmap_viz(viz_path, labels);
}

inline LabelMap load_labelmap(const fs::path& path) {
  const Raster r = read_raster(path);
  if (r.channels != 1)
    throw InvalidArgument("'" + path.string() + "': label raster must be single-channel, has " +
                          std::to_string(r.channels));
  LabelMap m(r.height, r.width);
  for (std::size_t n = 0; n < m.size(); ++n) m.data[n] = r.samples[n];
  return m;
}

// ---------------------------------------------------------------------------
// Model file: "SGCW", u32 version, u32 M, u32 p, u32 q, then little-endian
// f32 buffers in ParamSet::for_each order.
// ---------------------------------------------------------------------------

inline constexpr std::array<char, 4> kModelMagic{'S', 'G', 'C', 'W'};
inline constexpr std::uint32_t kModelVersion = 1;

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline std::vector<unsigned char> encode_model(const NetworkParams<float>& net) {
  std::vector<unsigned char> out(kModelMagic.begin(), kModelMagic.end());
  detail::put_u32(out, kModelVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(net.layers()));
  detail::put_u32(out, static_cast<std::uint32_t>(net.feature_dim()));
  detail::put_u32(out, static_cast<std::uint32_t>(net.clusters()));
  net.weights.for_each([&](const std::string&, const DenseArray<float>& a) {
    for (float v : a.values()) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      detail::put_u32(out, bits);
    }
  });
  return out;
}

inline NetworkParams<float> decode_model(const std::vector<unsigned char>& bytes, const std::string& name = "model") {
  constexpr std::size_t kHeader = 4 + 4 * 4;
  if (bytes.size() < kHeader) throw FormatError("'" + name + "': truncated header");
  if (!std::equal(kModelMagic.begin(), kModelMagic.end(), bytes.begin()))
    throw FormatError("'" + name + "': bad magic (not a model file)");
  const auto version = detail::get_u32(&bytes[4]);
  if (version != kModelVersion)
    throw FormatError("'" + name + "': unsupported model version " + std::to_string(version));
  const auto M = detail::get_u32(&bytes[8]), p = detail::get_u32(&bytes[12]), q = detail::get_u32(&bytes[16]);
  if (M < 1 || M > 1024 || p < 2 || p > 65536 || q < 2 || q > 65536)
    throw FormatError("'" + name + "': implausible dimensions M=" + std::to_string(M) + " p=" + std::to_string(p) +
                      " q=" + std::to_string(q));

  NetworkParams<float> net;
  net.weights = make_param_shapes<float>(M, p, q);
  std::size_t pos = kHeader;
  net.weights.for_each([&](const std::string& buf, DenseArray<float>& a) {
    const std::size_t need = a.size() * 4;
    if (bytes.size() - pos < need)
      throw FormatError("'" + name + "': truncated in buffer " + buf + " (needs " + std::to_string(need) +
                        " bytes, " + std::to_string(bytes.size() - pos) + " remain)");
    for (std::size_t i = 0; i < a.size(); ++i) {
      const std::uint32_t bits = detail::get_u32(&bytes[pos + 4 * i]);
      std::memcpy(&a[i], &bits, 4);
    }
    pos += need;
  });
  if (pos != bytes.size())
    throw FormatError("'" + name + "': " + std::to_string(bytes.size() - pos) + " trailing bytes after classifier");
  net.momentum = net.weights.zeros_like();
  return net;
}

inline void save_model(const fs::path& path, const NetworkParams<float>& net) { write_file(path, encode_model(net)); }

inline NetworkParams<float> load_model(const fs::path& path) { return decode_model(read_file(path), path.string()); }

// ---------------------------------------------------------------------------
// Loss history
// ---------------------------------------------------------------------------

inline void write_loss_csv(const fs::path& path, const std::vector<IterationRecord>& history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "iteration,sim,con,scr,total,unique_labels\n";
  out.precision(9);
  for (const auto& h : history)
    out << h.iteration << ',' << h.sim << ',' << h.con << ',' << h.scr << ',' << h.total << ',' << h.unique_labels
        << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace unseg::io
