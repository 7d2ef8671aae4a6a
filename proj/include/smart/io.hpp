// smart/io.hpp
//
// On-disk formats: PGM (P5) frames, PBM (P4) masks, dataset directories with
// split files, flat key=value config text, run manifests, CSV tables, CRC32,
// and simple PPM renderings (overlays, loss curves). All formats are
// bit-exact and dependency-free on the read/write path.

#pragma once

#include <array>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "smart/core.hpp"
#include "smart/flow.hpp"
#include "smart/synthdata.hpp"

namespace smart {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// CRC32 (IEEE 802.3 polynomial)
// ---------------------------------------------------------------------------

inline uint32_t crc32(const void* data, size_t n, uint32_t crc = 0) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  const unsigned char* p = static_cast<const unsigned char*>(data);
  crc = ~crc;
  for (size_t i = 0; i < n; ++i) crc = table[(crc ^ p[i]) & 0xff] ^ (crc >> 8);
  return ~crc;
}

// ---------------------------------------------------------------------------
// PGM / PBM / PPM
// ---------------------------------------------------------------------------

inline void write_pgm(const std::string& path, const Grid& img) {
  std::ofstream out(path, std::ios::binary);
  require(bool(out), "write_pgm: cannot open " + path);
  out << "P5\n" << img.w << " " << img.h << "\n255\n";
  for (double p : img.v) {
    double c = std::clamp(p, 0.0, 1.0);
    out.put(char(int(std::lround(c * 255.0))));
  }
}

namespace detail {
inline void skip_pnm_whitespace(std::istream& in) {
  while (true) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}
}  // namespace detail

inline Grid read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_pgm: missing file " + path);
  std::string magic;
  in >> magic;
  require(magic == "P5", "read_pgm: not a P5 file: " + path);
  int w, h, maxval;
  detail::skip_pnm_whitespace(in);
  in >> w;
  detail::skip_pnm_whitespace(in);
  in >> h;
  detail::skip_pnm_whitespace(in);
  in >> maxval;
  require(maxval == 255, "read_pgm: expected 8-bit maxval");
  in.get();  // single whitespace after header
  Grid g(h, w);
  for (double& p : g.v) p = double(uint8_t(in.get())) / 255.0;
  require(bool(in), "read_pgm: truncated file " + path);
  return g;
}

inline void write_pbm(const std::string& path, const BinaryMask& mask) {
  std::ofstream out(path, std::ios::binary);
  require(bool(out), "write_pbm: cannot open " + path);
  out << "P4\n" << mask.w << " " << mask.h << "\n";
  int row_bytes = (mask.w + 7) / 8;
  for (int y = 0; y < mask.h; ++y) {
    for (int b = 0; b < row_bytes; ++b) {
      unsigned char byte = 0;
      for (int k = 0; k < 8; ++k) {
        int x = b * 8 + k;
        if (x < mask.w && mask.at(y, x)) byte |= 0x80 >> k;
      }
      out.put(char(byte));
    }
  }
}

inline BinaryMask read_pbm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_pbm: missing file " + path);
  std::string magic;
  in >> magic;
  require(magic == "P4", "read_pbm: not a P4 file: " + path);
  int w, h;
  detail::skip_pnm_whitespace(in);
  in >> w;
  detail::skip_pnm_whitespace(in);
  in >> h;
  in.get();
  BinaryMask m(h, w);
  int row_bytes = (w + 7) / 8;
  for (int y = 0; y < h; ++y)
    for (int b = 0; b < row_bytes; ++b) {
      unsigned char byte = uint8_t(in.get());
      for (int k = 0; k < 8 && b * 8 + k < w; ++k)
        m.at(y, b * 8 + k) = (byte >> (7 - k)) & 1;
    }
  require(bool(in), "read_pbm: truncated file " + path);
  return m;
}

// RGB raster, 8-bit per channel.
struct RgbImage {
  int h = 0, w = 0;
  std::vector<uint8_t> v;  // 3 bytes per pixel

  RgbImage(int h_, int w_) : h(h_), w(w_), v(size_t(h_) * w_ * 3, 0) {}
  void set(int y, int x, uint8_t r, uint8_t g, uint8_t b) {
    size_t i = (size_t(y) * w + x) * 3;
    v[i] = r;
    v[i + 1] = g;
    v[i + 2] = b;
  }
};

inline void write_ppm(const std::string& path, const RgbImage& img) {
  std::ofstream out(path, std::ios::binary);
  require(bool(out), "write_ppm: cannot open " + path);
  out << "P6\n" << img.w << " " << img.h << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.v.data()), std::streamsize(img.v.size()));
}

// ---------------------------------------------------------------------------
// Dataset directory
//   clips/<clip_id>/frame_<t>.pgm
//   masks/<clip_id>/mask_<t>.pbm          (annotated frames only)
//   flows/<clip_id>/<clip_id>_<t>_{fwd|bwd}.flo32
//   split.txt                             (lines: "<role> <clip_id>")
// ---------------------------------------------------------------------------

inline void write_clip(const fs::path& root, const VideoClip& clip) {
  fs::create_directories(root / "clips" / clip.clip_id);
  for (const ImageFrame& f : clip.frames)
    write_pgm((root / "clips" / clip.clip_id / ("frame_" + std::to_string(f.frame_index) + ".pgm"))
                  .string(),
              f.pixels);
  if (!clip.masks.empty()) {
    fs::create_directories(root / "masks" / clip.clip_id);
    for (const auto& [idx, m] : clip.masks)
      write_pbm((root / "masks" / clip.clip_id / ("mask_" + std::to_string(idx) + ".pbm"))
                    .string(),
                m);
  }
  if (clip.has_flows()) {
    fs::create_directories(root / "flows" / clip.clip_id);
    for (size_t i = 0; i < clip.flows.size(); ++i) {
      int t = clip.frames[i].frame_index;
      write_flo32((root / "flows" / clip.clip_id / flo32_name(clip.clip_id, t, FlowDirection::kForward))
                      .string(),
                  clip.flows[i].forward);
      write_flo32((root / "flows" / clip.clip_id / flo32_name(clip.clip_id, t, FlowDirection::kBackward))
                      .string(),
                  clip.flows[i].backward);
    }
  }
}

inline void write_dataset(const std::string& dir, const Dataset& ds) {
  fs::path root(dir);
  fs::create_directories(root);
  std::ofstream split(root / "split.txt");
  require(bool(split), "write_dataset: cannot open split.txt");
  for (const VideoClip& c : ds.labeled) {
    write_clip(root, c);
    split << "labeled " << c.clip_id << "\n";
  }
  for (const VideoClip& c : ds.unlabeled) {
    write_clip(root, c);
    split << "unlabeled " << c.clip_id << "\n";
  }
  for (const VideoClip& c : ds.test) {
    write_clip(root, c);
    split << "test " << c.clip_id << "\n";
  }
}

inline VideoClip read_clip(const fs::path& root, const std::string& clip_id) {
  VideoClip clip;
  clip.clip_id = clip_id;
  fs::path cdir = root / "clips" / clip_id;
  if (!fs::exists(cdir)) throw std::runtime_error("read_clip: no such clip " + clip_id);

  std::vector<int> indices;
  for (const auto& e : fs::directory_iterator(cdir)) {
    std::string name = e.path().filename().string();
    if (name.rfind("frame_", 0) == 0)
      indices.push_back(std::stoi(name.substr(6, name.size() - 6 - 4)));
  }
  std::sort(indices.begin(), indices.end());
  for (int t : indices)
    clip.frames.push_back(
        ImageFrame{read_pgm((cdir / ("frame_" + std::to_string(t) + ".pgm")).string()), t});

  fs::path mdir = root / "masks" / clip_id;
  if (fs::exists(mdir))
    for (int t : indices) {
      fs::path mp = mdir / ("mask_" + std::to_string(t) + ".pbm");
      if (fs::exists(mp)) clip.masks.emplace_back(t, read_pbm(mp.string()));
    }

  fs::path fdir = root / "flows" / clip_id;
  if (fs::exists(fdir) && clip.frames.size() > 1) {
    bool all_present = true;
    for (size_t i = 0; i + 1 < clip.frames.size() && all_present; ++i)
      if (!fs::exists(fdir / flo32_name(clip_id, clip.frames[i].frame_index,
                                        FlowDirection::kForward)))
        all_present = false;
    if (all_present) {
      int h = clip.frames[0].pixels.h, w = clip.frames[0].pixels.w;
      for (size_t i = 0; i + 1 < clip.frames.size(); ++i) {
        int t = clip.frames[i].frame_index;
        clip.flows.push_back(FlowPair{
            read_flo32((fdir / flo32_name(clip_id, t, FlowDirection::kForward)).string(), h, w,
                       FlowDirection::kForward),
            read_flo32((fdir / flo32_name(clip_id, t, FlowDirection::kBackward)).string(), h, w,
                       FlowDirection::kBackward)});
      }
    }
  }
  return clip;
}

inline Dataset read_dataset(const std::string& dir) {
  fs::path root(dir);
  std::ifstream split(root / "split.txt");
  if (!split) throw std::runtime_error("read_dataset: missing split.txt in " + dir);
  Dataset ds;
  std::string role, id;
  while (split >> role >> id) {
    VideoClip clip = read_clip(root, id);
    if (role == "labeled")
      ds.labeled.push_back(std::move(clip));
    else if (role == "unlabeled")
      ds.unlabeled.push_back(std::move(clip));
    else if (role == "test")
      ds.test.push_back(std::move(clip));
    else
      throw std::runtime_error("read_dataset: unknown split role '" + role + "'");
  }
  return ds;
}

// Order-independent content checksum of a dataset directory (file name +
// contents), for determinism fixtures.
inline uint64_t dataset_checksum(const std::string& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "manifest.json")
      files.push_back(e.path());
  std::sort(files.begin(), files.end());
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const fs::path& p : files) {
    std::string rel = fs::relative(p, dir).generic_string();
    h = fnv1a64(rel.data(), rel.size(), h);
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    std::string bytes = ss.str();
    h = fnv1a64(bytes.data(), bytes.size(), h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Flat key = value config text. Lines starting with '#' are comments.
// ---------------------------------------------------------------------------

inline std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: line " + std::to_string(lineno) + " is not key = value");
    std::string key = trim(t.substr(0, eq));
    std::string val = trim(t.substr(eq + 1));
    if (key.empty()) throw std::runtime_error("config: empty key on line " + std::to_string(lineno));
    kv[key] = val;
  }
  return kv;
}

inline std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path);
  require(bool(out), "write_csv: cannot open " + path);
  for (size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << "\n";
  for (const auto& row : rows) {
    for (size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
    out << "\n";
  }
}

inline std::string fmt_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Simple renderings
// ---------------------------------------------------------------------------

// Grayscale frame with ground-truth boundary in green, prediction boundary
// in red (overlap shows yellow-ish by drawing gt after pred edges).
inline RgbImage render_overlay(const Grid& frame, const BinaryMask& pred_boundary,
                               const BinaryMask& gt_boundary) {
  RgbImage img(frame.h, frame.w);
  for (int y = 0; y < frame.h; ++y)
    for (int x = 0; x < frame.w; ++x) {
      uint8_t g = uint8_t(std::lround(std::clamp(frame.at(y, x), 0.0, 1.0) * 255.0));
      img.set(y, x, g, g, g);
      if (pred_boundary.at(y, x)) img.set(y, x, 230, 40, 40);
      if (gt_boundary.at(y, x)) img.set(y, x, 40, 200, 40);
    }
  return img;
}

// Polyline plot of one or more series on a dark background.
inline RgbImage render_curves(const std::vector<std::vector<double>>& series, int h = 360,
                              int w = 640) {
  RgbImage img(h, w);
  const uint8_t palette[6][3] = {{230, 90, 90},  {90, 200, 120}, {100, 140, 240},
                                 {230, 200, 80}, {200, 110, 220}, {120, 220, 220}};
  double lo = 0.0, hi = 1e-9;
  size_t n = 0;
  for (const auto& s : series)
    for (double v : s) {
      hi = std::max(hi, v);
      lo = std::min(lo, v);
    }
  for (const auto& s : series) n = std::max(n, s.size());
  if (n < 2) return img;
  for (size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const uint8_t* col = palette[si % 6];
    for (size_t i = 0; i + 1 < s.size(); ++i) {
      // draw segment (i -> i+1) with simple interpolation
      double x0 = double(i) / double(n - 1) * (w - 1);
      double x1 = double(i + 1) / double(n - 1) * (w - 1);
      double y0 = (1.0 - (s[i] - lo) / (hi - lo)) * (h - 1);
      double y1 = (1.0 - (s[i + 1] - lo) / (hi - lo)) * (h - 1);
      int steps = std::max(2, int(std::abs(x1 - x0) + std::abs(y1 - y0)));
      for (int k = 0; k <= steps; ++k) {
        double t = double(k) / steps;
        int x = int(std::lround(x0 + (x1 - x0) * t));
        int y = int(std::lround(y0 + (y1 - y0) * t));
        if (x >= 0 && x < w && y >= 0 && y < h) img.set(y, x, col[0], col[1], col[2]);
      }
    }
  }
  return img;
}

}  // namespace smart
