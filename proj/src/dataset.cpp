#include "ntp/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "ntp/io.hpp"
#include "ntp/rng.hpp"
#include "json.hpp"

namespace ntp::data {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(ShiftKind k) {
  switch (k) {
    case ShiftKind::identity: return "identity";
    case ShiftKind::color_inversion: return "color_inversion";
    case ShiftKind::background_noise: return "background_noise";
    case ShiftKind::channel_permutation: return "channel_permutation";
  }
  throw std::logic_error("bad ShiftKind");
}

ShiftKind shift_from_string(const std::string& s) {
  if (s == "identity") return ShiftKind::identity;
  if (s == "color_inversion") return ShiftKind::color_inversion;
  if (s == "background_noise") return ShiftKind::background_noise;
  if (s == "channel_permutation") return ShiftKind::channel_permutation;
  throw std::invalid_argument("unknown shift kind: " + s);
}

std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

void DomainDataset::validate() const {
  for (const auto& s : samples) {
    if (s.x.size() != shape.pixel_count())
      throw std::runtime_error("sample tensor size mismatch in " + name);
    if (s.y >= label_set.size())
      throw std::runtime_error("label out of range in " + name);
    for (const float v : s.x)
      if (!(v >= 0.0f && v <= 1.0f))
        throw std::runtime_error("pixel outside [0,1] in " + name);
  }
}

// ---------------------------------------------------------------------------
// synthetic glyph renderer
// ---------------------------------------------------------------------------

namespace {

// 5x7 digit bitmaps, row-major, MSB-left in a 5-bit row.
constexpr std::array<std::array<std::uint8_t, 7>, 10> kDigitRows{{
    {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E},  // 0
    {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},  // 1
    {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F},  // 2
    {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},  // 3
    {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02},  // 4
    {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},  // 5
    {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E},  // 6
    {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},  // 7
    {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E},  // 8
    {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C},  // 9
}};

constexpr std::size_t kGlyphW = 5, kGlyphH = 7;

// Glyph bitmap as floats; classes beyond the digit font get a deterministic
// procedural pattern derived from the class index alone.
std::array<float, kGlyphW * kGlyphH> glyph_bitmap(std::size_t cls) {
  std::array<float, kGlyphW * kGlyphH> g{};
  if (cls < kDigitRows.size()) {
    for (std::size_t r = 0; r < kGlyphH; ++r)
      for (std::size_t c = 0; c < kGlyphW; ++c)
        g[r * kGlyphW + c] = (kDigitRows[cls][r] >> (kGlyphW - 1 - c)) & 1 ? 1.0f : 0.0f;
    return g;
  }
  Rng rng(mix_seed(0x67 , "glyph", cls));
  std::size_t on = 0;
  for (auto& v : g) {
    v = rng.uniform() < 0.45 ? 1.0f : 0.0f;
    on += v > 0.5f;
  }
  if (on == 0) g[kGlyphW * kGlyphH / 2] = 1.0f;
  return g;
}

// Bilinear lookup into a glyph bitmap at fractional coordinates, zero outside.
float sample_glyph(const std::array<float, kGlyphW * kGlyphH>& g, double gx, double gy) {
  const int x0 = static_cast<int>(std::floor(gx));
  const int y0 = static_cast<int>(std::floor(gy));
  const double fx = gx - x0, fy = gy - y0;
  auto at = [&](int x, int y) -> double {
    if (x < 0 || y < 0 || x >= static_cast<int>(kGlyphW) || y >= static_cast<int>(kGlyphH)) return 0.0;
    return g[static_cast<std::size_t>(y) * kGlyphW + x];
  };
  return static_cast<float>(at(x0, y0) * (1 - fx) * (1 - fy) + at(x0 + 1, y0) * fx * (1 - fy) +
                            at(x0, y0 + 1) * (1 - fx) * fy + at(x0 + 1, y0 + 1) * fx * fy);
}

std::vector<float> render_glyph_sample(std::size_t cls, const ImageShape& shape, Rng& rng) {
  const auto glyph = glyph_bitmap(cls);
  const double H = static_cast<double>(shape.height), W = static_cast<double>(shape.width);

  const double cell = rng.uniform(0.55, 0.80) * std::min(W / kGlyphW, H / kGlyphH);
  const double gw = cell * kGlyphW, gh = cell * kGlyphH;
  const double x0 = rng.uniform(0.0, std::max(1.0, W - gw));
  const double y0 = rng.uniform(0.0, std::max(1.0, H - gh));

  const double bg = rng.uniform(0.02, 0.14);
  std::array<double, 3> fg{};
  for (auto& ch : fg) ch = rng.uniform(0.55, 0.98);

  std::vector<float> img(shape.pixel_count());
  for (std::size_t y = 0; y < shape.height; ++y) {
    for (std::size_t x = 0; x < shape.width; ++x) {
      const double gx = (static_cast<double>(x) + 0.5 - x0) / cell - 0.5;
      const double gy = (static_cast<double>(y) + 0.5 - y0) / cell - 0.5;
      const double alpha = sample_glyph(glyph, gx, gy);
      for (std::size_t c = 0; c < shape.channels; ++c) {
        const double fgc = fg[c % 3];
        double v = bg + alpha * (fgc - bg);
        v += rng.uniform(-0.02, 0.02);
        img[(y * shape.width + x) * shape.channels + c] =
            static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return img;
}

void apply_shift(std::vector<float>& x, const ImageShape& shape, ShiftKind kind,
                 double noise_level, Rng& rng) {
  switch (kind) {
    case ShiftKind::identity:
      return;
    case ShiftKind::color_inversion:
      for (auto& v : x) v = 1.0f - v;
      return;
    case ShiftKind::background_noise:
      for (auto& v : x)
        v = static_cast<float>(std::clamp(v + rng.uniform() * noise_level, 0.0, 1.0));
      return;
    case ShiftKind::channel_permutation: {
      if (shape.channels < 2) return;
      const std::size_t c = shape.channels;
      for (std::size_t px = 0; px < x.size(); px += c) {
        const float first = x[px];
        for (std::size_t k = 0; k + 1 < c; ++k) x[px + k] = x[px + k + 1];
        x[px + c - 1] = first;
      }
      return;
    }
  }
}

}  // namespace

std::pair<DomainDataset, DomainDataset> generate_synthetic_domain_pair(const SyntheticPairConfig& spec) {
  if (spec.classes < 2) throw std::invalid_argument("need at least 2 classes");
  if (spec.per_class < 4) throw std::invalid_argument("need at least 4 samples per class");
  if (spec.shape.channels != 1 && spec.shape.channels != 3)
    throw std::invalid_argument("channels must be 1 or 3");

  DomainDataset source, target;
  source.shape = target.shape = spec.shape;
  source.split = target.split = Split::train;
  source.seed_provenance = target.seed_provenance = spec.seed;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    source.label_set.push_back(std::to_string(c));
    target.label_set.push_back(std::to_string(c));
  }
  source.name = "glyphs-source";
  target.name = "glyphs-target-" + to_string(spec.shift);

  std::ostringstream prov;
  prov << "synthetic classes=" << spec.classes << " per_class=" << spec.per_class
       << " shift=" << to_string(spec.shift) << " noise=" << io::fmt_double(spec.noise_level);
  source.provenance = prov.str() + " side=source";
  target.provenance = prov.str() + " side=target";

  source.samples.reserve(spec.classes * spec.per_class);
  target.samples.reserve(spec.classes * spec.per_class);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      Rng render_rng(mix_seed(spec.seed, "render", c, i));
      LabeledSample s;
      s.y = static_cast<std::uint16_t>(c);
      s.x = render_glyph_sample(c, spec.shape, render_rng);

      LabeledSample t = s;  // same base render; domains differ only by the shift
      Rng shift_rng(mix_seed(spec.seed, "shift", c, i));
      apply_shift(t.x, spec.shape, spec.shift, spec.noise_level, shift_rng);

      source.samples.push_back(std::move(s));
      target.samples.push_back(std::move(t));
    }
  }
  return {std::move(source), std::move(target)};
}

// ---------------------------------------------------------------------------
// subsets and size grids
// ---------------------------------------------------------------------------

std::size_t SubsetSpec::resolve(std::size_t dataset_size) const {
  std::size_t n = count;
  if (fraction > 0.0) {
    if (fraction > 1.0) throw std::invalid_argument("fraction must be in (0,1]");
    n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(dataset_size)));
  }
  if (n == 0) throw std::invalid_argument("subset count resolves to zero");
  if (n > dataset_size) throw std::invalid_argument("subset count exceeds dataset size");
  return n;
}

namespace {

std::vector<std::vector<std::size_t>> indices_by_class(const DomainDataset& ds) {
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes());
  for (std::size_t i = 0; i < ds.samples.size(); ++i)
    by_class[ds.samples[i].y].push_back(i);
  return by_class;
}

DomainDataset take_indices(const DomainDataset& ds, std::vector<std::size_t> idx,
                           std::uint64_t seed) {
  std::sort(idx.begin(), idx.end());
  DomainDataset out;
  out.name = ds.name;
  out.label_set = ds.label_set;
  out.shape = ds.shape;
  out.split = ds.split;
  out.provenance = ds.provenance;
  out.seed_provenance = seed;
  out.samples.reserve(idx.size());
  for (const std::size_t i : idx) out.samples.push_back(ds.samples[i]);
  return out;
}

}  // namespace

DomainDataset stratified_subset(const DomainDataset& ds, const SubsetSpec& spec) {
  const std::size_t n = spec.resolve(ds.size());
  std::vector<std::size_t> chosen;
  chosen.reserve(n);

  if (!spec.stratified) {
    // prefix of a seed-fixed shuffle; prefixes nest by construction
    Rng rng(mix_seed(spec.seed, "subset-flat"));
    auto perm = rng.permutation(ds.size());
    chosen.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n));
    return take_indices(ds, std::move(chosen), spec.seed);
  }

  const std::size_t k = ds.num_classes();
  if (n < k) throw std::invalid_argument("stratified subset smaller than the class count");
  const auto by_class = indices_by_class(ds);
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t quota = n / k + (c < n % k ? 1 : 0);
    if (quota > by_class[c].size())
      throw std::invalid_argument("class " + ds.label_set[c] + " too small for stratified subset");
    // per-class permutation depends on (seed, class) only, never on n,
    // so subsets at growing n are nested
    Rng rng(mix_seed(spec.seed, "subset-class", c));
    std::vector<std::size_t> perm = by_class[c];
    rng.shuffle(perm);
    chosen.insert(chosen.end(), perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(quota));
  }
  return take_indices(ds, std::move(chosen), spec.seed);
}

std::pair<DomainDataset, DomainDataset> split_train_test(const DomainDataset& ds,
                                                         double train_fraction,
                                                         std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw std::invalid_argument("train_fraction must be in (0,1)");
  const auto by_class = indices_by_class(ds);
  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (by_class[c].empty()) throw std::invalid_argument("class with zero samples: " + ds.label_set[c]);
    Rng rng(mix_seed(seed, "split-class", c));
    std::vector<std::size_t> perm = by_class[c];
    rng.shuffle(perm);
    std::size_t n_train = static_cast<std::size_t>(
        std::llround(train_fraction * static_cast<double>(perm.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, perm.size() - 1);
    train_idx.insert(train_idx.end(), perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
    test_idx.insert(test_idx.end(), perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
  }
  auto train = take_indices(ds, std::move(train_idx), seed);
  auto test = take_indices(ds, std::move(test_idx), seed);
  train.split = Split::train;
  test.split = Split::test;
  return {std::move(train), std::move(test)};
}

std::vector<std::size_t> log_spaced_sizes(std::size_t n_min, std::size_t n_max, std::size_t k) {
  if (k < 2) throw std::invalid_argument("need at least 2 grid points");
  if (n_min < 1 || n_min >= n_max) throw std::invalid_argument("need 1 <= n_min < n_max");
  std::vector<std::size_t> out;
  const double lo = std::log10(static_cast<double>(n_min));
  const double hi = std::log10(static_cast<double>(n_max));
  for (std::size_t i = 0; i < k; ++i) {
    const double e = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(k - 1);
    const double v = std::pow(10.0, e);
    // round up except when v sits on an integer up to FP noise
    const double nearest = std::round(v);
    std::size_t n = std::abs(v - nearest) < 1e-9 ? static_cast<std::size_t>(nearest)
                                                 : static_cast<std::size_t>(std::ceil(v));
    if (i == 0) n = n_min;
    if (i + 1 == k) n = n_max;
    if (out.empty() || n > out.back()) out.push_back(n);
  }
  return out;
}

// ---------------------------------------------------------------------------
// PNM ingestion
// ---------------------------------------------------------------------------

namespace {

struct RawImage {
  std::size_t w = 0, h = 0, c = 0;
  std::vector<float> px;  // h*w*c in [0,1]
};

int pnm_next_token(const std::vector<unsigned char>& b, std::size_t& pos) {
  // skips whitespace and # comments, returns a non-negative int
  while (pos < b.size()) {
    const char ch = static_cast<char>(b[pos]);
    if (ch == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(ch))) {
      ++pos;
    } else {
      break;
    }
  }
  if (pos >= b.size() || !std::isdigit(b[pos])) throw std::runtime_error("malformed PNM header");
  int v = 0;
  while (pos < b.size() && std::isdigit(b[pos])) {
    v = v * 10 + (b[pos] - '0');
    ++pos;
  }
  return v;
}

RawImage parse_pnm(const fs::path& file) {
  const auto bytes = io::read_file(file);
  if (bytes.size() < 2 || bytes[0] != 'P')
    throw std::runtime_error("not a PNM image: " + file.string());
  const char kind = static_cast<char>(bytes[1]);
  if (kind != '2' && kind != '3' && kind != '5' && kind != '6')
    throw std::runtime_error("unsupported PNM variant: " + file.string());
  const bool binary = kind == '5' || kind == '6';
  const std::size_t channels = (kind == '3' || kind == '6') ? 3 : 1;

  std::size_t pos = 2;
  RawImage img;
  img.w = static_cast<std::size_t>(pnm_next_token(bytes, pos));
  img.h = static_cast<std::size_t>(pnm_next_token(bytes, pos));
  img.c = channels;
  const int maxval = pnm_next_token(bytes, pos);
  if (maxval <= 0 || maxval > 65535) throw std::runtime_error("bad PNM maxval: " + file.string());
  const std::size_t count = img.w * img.h * channels;
  img.px.resize(count);

  if (binary) {
    ++pos;  // single whitespace after maxval
    const std::size_t stride = maxval > 255 ? 2 : 1;
    if (pos + count * stride > bytes.size())
      throw std::runtime_error("truncated PNM data: " + file.string());
    for (std::size_t i = 0; i < count; ++i) {
      unsigned v = bytes[pos + i * stride];
      if (stride == 2) v = (v << 8) | bytes[pos + i * stride + 1];
      img.px[i] = static_cast<float>(v) / static_cast<float>(maxval);
    }
  } else {
    for (std::size_t i = 0; i < count; ++i)
      img.px[i] = static_cast<float>(pnm_next_token(bytes, pos)) / static_cast<float>(maxval);
  }
  return img;
}

std::vector<float> resize_bilinear(const RawImage& src, const ImageShape& dst) {
  std::vector<float> out(dst.pixel_count());
  const double sx = static_cast<double>(src.w) / static_cast<double>(dst.width);
  const double sy = static_cast<double>(src.h) / static_cast<double>(dst.height);
  auto src_at = [&](std::size_t x, std::size_t y, std::size_t c) {
    x = std::min(x, src.w - 1);
    y = std::min(y, src.h - 1);
    return src.px[(y * src.w + x) * src.c + c];
  };
  for (std::size_t y = 0; y < dst.height; ++y) {
    const double fy = std::max(0.0, (static_cast<double>(y) + 0.5) * sy - 0.5);
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < dst.width; ++x) {
      const double fx = std::max(0.0, (static_cast<double>(x) + 0.5) * sx - 0.5);
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < dst.channels; ++c) {
        float v;
        if (dst.channels == src.c) {
          const double a = src_at(x0, y0, c) * (1 - wx) + src_at(x0 + 1, y0, c) * wx;
          const double b = src_at(x0, y0 + 1, c) * (1 - wx) + src_at(x0 + 1, y0 + 1, c) * wx;
          v = static_cast<float>(a * (1 - wy) + b * wy);
        } else if (src.c == 1) {
          // replicate grayscale across channels
          const double a = src_at(x0, y0, 0) * (1 - wx) + src_at(x0 + 1, y0, 0) * wx;
          const double b = src_at(x0, y0 + 1, 0) * (1 - wx) + src_at(x0 + 1, y0 + 1, 0) * wx;
          v = static_cast<float>(a * (1 - wy) + b * wy);
        } else {
          // collapse color to mean intensity
          double acc = 0;
          for (std::size_t sc = 0; sc < src.c; ++sc) {
            const double a = src_at(x0, y0, sc) * (1 - wx) + src_at(x0 + 1, y0, sc) * wx;
            const double b = src_at(x0, y0 + 1, sc) * (1 - wx) + src_at(x0 + 1, y0 + 1, sc) * wx;
            acc += a * (1 - wy) + b * wy;
          }
          v = static_cast<float>(acc / static_cast<double>(src.c));
        }
        out[(y * dst.width + x) * dst.channels + c] = std::clamp(v, 0.0f, 1.0f);
      }
    }
  }
  return out;
}

bool has_pnm_extension(const fs::path& p) {
  const auto ext = p.extension().string();
  return ext == ".ppm" || ext == ".pgm" || ext == ".pnm";
}

}  // namespace

DomainDataset load_image_domain(const fs::path& path, const ImageShape& shape) {
  if (!fs::exists(path)) throw std::runtime_error("no such dataset path: " + path.string());
  if (shape.channels != 1 && shape.channels != 3)
    throw std::invalid_argument("channels must be 1 or 3");

  if (fs::exists(path / "manifest.json")) {
    DomainDataset ds = load_dataset(path);
    if (ds.shape.height == shape.height && ds.shape.width == shape.width &&
        ds.shape.channels == shape.channels)
      return ds;
    for (auto& s : ds.samples) {
      RawImage raw{ds.shape.width, ds.shape.height, ds.shape.channels, std::move(s.x)};
      s.x = resize_bilinear(raw, shape);
    }
    ds.shape = shape;
    return ds;
  }

  if (!fs::is_directory(path)) throw std::runtime_error("dataset path is not a directory: " + path.string());

  std::vector<std::string> classes;
  for (const auto& entry : fs::directory_iterator(path))
    if (entry.is_directory()) classes.push_back(entry.path().filename().string());
  std::sort(classes.begin(), classes.end());
  if (classes.size() < 2) throw std::runtime_error("need at least 2 class directories in " + path.string());

  DomainDataset ds;
  ds.name = path.filename().string();
  ds.label_set = classes;
  ds.shape = shape;
  ds.split = Split::train;
  ds.provenance = "directory " + path.string();

  for (std::size_t c = 0; c < classes.size(); ++c) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(path / classes[c])) {
      if (!entry.is_regular_file()) continue;
      if (!has_pnm_extension(entry.path()))
        throw std::runtime_error("not an image file: " + entry.path().string());
      files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("class with zero images: " + classes[c]);
    for (const auto& f : files) {
      LabeledSample s;
      s.y = static_cast<std::uint16_t>(c);
      s.x = resize_bilinear(parse_pnm(f), shape);
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// persistence
// ---------------------------------------------------------------------------

void save_dataset(const DomainDataset& ds, const fs::path& dir) {
  fs::create_directories(dir);

  json manifest;
  manifest["format"] = "ntp-dataset-v1";
  manifest["name"] = ds.name;
  manifest["label_set"] = ds.label_set;
  manifest["split"] = to_string(ds.split);
  manifest["shift_config"] = ds.provenance;
  if (ds.seed_provenance)
    manifest["seed"] = *ds.seed_provenance;
  else
    manifest["seed"] = nullptr;
  io::write_file(dir / "manifest.json", manifest.dump(2) + "\n");

  io::ByteWriter w;
  w.put_u32(static_cast<std::uint32_t>(ds.samples.size()));
  w.put_u32(static_cast<std::uint32_t>(ds.shape.height));
  w.put_u32(static_cast<std::uint32_t>(ds.shape.width));
  w.put_u32(static_cast<std::uint32_t>(ds.shape.channels));
  for (const auto& s : ds.samples)
    for (const float v : s.x) w.put_f32(v);
  for (const auto& s : ds.samples) w.put_u16(s.y);
  io::write_file(dir / "data.bin", w.bytes);
}

DomainDataset load_dataset(const fs::path& dir) {
  const json manifest = json::parse(io::read_text_file(dir / "manifest.json"));
  DomainDataset ds;
  ds.name = manifest.at("name").get<std::string>();
  ds.label_set = manifest.at("label_set").get<std::vector<std::string>>();
  ds.split = manifest.at("split").get<std::string>() == "train" ? Split::train : Split::test;
  ds.provenance = manifest.value("shift_config", std::string{});
  if (manifest.contains("seed") && !manifest["seed"].is_null())
    ds.seed_provenance = manifest["seed"].get<std::uint64_t>();

  const auto bytes = io::read_file(dir / "data.bin");
  io::ByteReader r(bytes);
  const std::uint32_t n = r.get_u32();
  ds.shape.height = r.get_u32();
  ds.shape.width = r.get_u32();
  ds.shape.channels = r.get_u32();
  ds.samples.resize(n);
  for (auto& s : ds.samples) {
    s.x.resize(ds.shape.pixel_count());
    for (auto& v : s.x) v = r.get_f32();
  }
  for (auto& s : ds.samples) s.y = r.get_u16();
  if (!r.at_end()) throw std::runtime_error("trailing bytes in " + (dir / "data.bin").string());
  ds.validate();
  return ds;
}

}  // namespace ntp::data
