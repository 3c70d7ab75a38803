#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ntp::data {

/// One image sample: H x W x C row-major values in [0,1] plus a class index.
struct LabeledSample {
  std::vector<float> x;
  std::uint16_t y = 0;
};

struct ImageShape {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 3;
  std::size_t pixel_count() const { return height * width * channels; }
};

enum class Split { train, test };

enum class ShiftKind { identity, color_inversion, background_noise, channel_permutation };

std::string to_string(ShiftKind k);
ShiftKind shift_from_string(const std::string& s);
std::string to_string(Split s);

/// Immutable labeled dataset for one domain and one split.
struct DomainDataset {
  std::string name;
  std::vector<LabeledSample> samples;
  std::vector<std::string> label_set;
  ImageShape shape;
  Split split = Split::train;
  std::optional<std::uint64_t> seed_provenance;

  std::size_t size() const { return samples.size(); }
  std::size_t num_classes() const { return label_set.size(); }
  /// Throws if a sample is out of range, non-finite, or mislabeled.
  void validate() const;
};

/// Synthetic glyph-domain pair configuration. The source domain renders
/// per-class glyphs with per-sample jitter; the target applies `shift` to the
/// very same renders, so the two domains differ only by the shift.
struct SyntheticPairConfig {
  std::size_t classes = 10;
  std::size_t per_class = 200;
  ImageShape shape{32, 32, 3};
  ShiftKind shift = ShiftKind::color_inversion;
  double noise_level = 0.25;  // background_noise amplitude
  std::uint64_t seed = 0;
};

/// Renders the paired source/target domains. Deterministic in `spec`.
std::pair<DomainDataset, DomainDataset> generate_synthetic_domain_pair(const SyntheticPairConfig& spec);

/// Subset request: either an absolute count or a fraction of the dataset.
struct SubsetSpec {
  std::size_t count = 0;      // used when fraction is unset
  double fraction = 0.0;      // in (0,1] when set (> 0)
  bool stratified = true;
  std::uint64_t seed = 0;

  static SubsetSpec by_count(std::size_t n, bool stratified, std::uint64_t seed) {
    return SubsetSpec{n, 0.0, stratified, seed};
  }
  static SubsetSpec by_fraction(double f, bool stratified, std::uint64_t seed) {
    return SubsetSpec{0, f, stratified, seed};
  }
  std::size_t resolve(std::size_t dataset_size) const;
};

/// Seeded subset with per-class counts balanced to within one sample.
/// Subsets from the same seed are nested: the size-m subset is contained in
/// every size-m' subset with m' > m.
DomainDataset stratified_subset(const DomainDataset& ds, const SubsetSpec& spec);

/// Deterministic stratified train/test split (train_fraction of each class).
std::pair<DomainDataset, DomainDataset> split_train_test(const DomainDataset& ds,
                                                         double train_fraction,
                                                         std::uint64_t seed);

/// k geometrically spaced integers from n_min to n_max inclusive, rounded up,
/// strictly increasing (duplicates collapse, so fewer than k may come back).
std::vector<std::size_t> log_spaced_sizes(std::size_t n_min, std::size_t n_max, std::size_t k);

/// Loads a domain from disk. Accepts either a persisted dataset directory
/// (manifest.json + data.bin) or a tree of class subdirectories holding
/// PPM/PGM images. Images are bilinearly resized to `shape` and scaled to
/// [0,1]; grayscale inputs are replicated across channels.
DomainDataset load_image_domain(const std::filesystem::path& path, const ImageShape& shape);

/// Persistence: manifest.json plus data.bin
/// (little-endian header uint32 N,H,W,C; N*H*W*C float32; N uint16 labels).
void save_dataset(const DomainDataset& ds, const std::filesystem::path& dir);
DomainDataset load_dataset(const std::filesystem::path& dir);

}  // namespace ntp::data
