#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ntp/dataset.hpp"
#include "ntp/rng.hpp"

namespace ntp::model {

/// Batched activations in NCHW order. Linear layers treat c*h*w as one flat
/// feature axis (h = w = 1 after a Linear).
struct Batch {
  std::size_t n = 0, c = 0, h = 0, w = 0;
  std::vector<double> v;

  Batch() = default;
  Batch(std::size_t n_, std::size_t c_, std::size_t h_, std::size_t w_)
      : n(n_), c(c_), h(h_), w(w_), v(n_ * c_ * h_ * w_, 0.0) {}
  std::size_t feature_size() const { return c * h * w; }
  double* sample(std::size_t i) { return v.data() + i * feature_size(); }
  const double* sample(std::size_t i) const { return v.data() + i * feature_size(); }
};

/// Feature matrix (batch x feature_dim) with labels.
struct FeatureBatch {
  std::size_t n = 0, dim = 0;
  std::vector<double> z;  // n * dim row-major
  std::vector<std::uint16_t> y;

  double* row(std::size_t i) { return z.data() + i * dim; }
  const double* row(std::size_t i) const { return z.data() + i * dim; }
};

struct TensorDesc {
  std::string name;
  std::vector<std::size_t> shape;
  bool prunable = false;  // weight tensors of the feature extractor only
  bool in_phi = false;
  std::size_t offset = 0;  // into the flat parameter vector
  std::size_t size = 0;
};

/// Binary keep/zero mask over the prunable parameters of the feature extractor.
struct SparsityMask {
  std::vector<std::uint8_t> keep;  // 1 keep, 0 force-zero
  std::string scope = "feature-extractor-weights";

  std::size_t size() const { return keep.size(); }
  std::size_t zeros() const;
  double sparsity() const;  // fraction of zeros
};

/// card(v)/|v| with exact-zero semantics. Throws on an empty vector.
double density(std::span<const double> v);

class Layer;

struct SupervisedTrainConfig {
  std::size_t epochs = 10;
  double lr = 1e-3;
  std::size_t batch_size = 128;
  std::size_t lr_decay_every = 10;   // epochs; 0 disables
  double lr_decay_factor = 0.1;
  std::uint64_t seed = 0;
  bool train_phi = true;             // false = linear probe (head only)
  bool respect_mask = true;          // keep masked weights at exactly zero
};

/// Feature extractor + classifier head over one flat parameter store.
/// Training mutates parameters and must be serialized by the caller;
/// inference on a const instance is safe concurrently.
class SplitClassifier {
 public:
  SplitClassifier(std::string arch_id, data::ImageShape input, std::size_t classes,
                  std::uint64_t init_seed);
  SplitClassifier(const SplitClassifier& other);
  SplitClassifier& operator=(const SplitClassifier&) = delete;
  ~SplitClassifier();

  const std::string& arch_id() const { return arch_id_; }
  const data::ImageShape& input_shape() const { return input_; }
  std::size_t num_classes() const { return classes_; }
  std::size_t feature_dim() const { return feature_dim_; }
  std::uint64_t init_seed() const { return init_seed_; }

  // --- parameters -----------------------------------------------------------
  const std::vector<TensorDesc>& tensors() const { return tensors_; }
  std::size_t param_count() const { return params_.size(); }
  std::span<const double> params() const { return params_; }
  std::span<double> params() { return params_; }
  void set_params(std::span<const double> p);

  /// Flat view of the prunable feature-extractor weights (W1 less biases).
  std::size_t prunable_count() const { return prunable_to_flat_.size(); }
  std::vector<double> prunable_weights() const;
  void set_prunable_weights(std::span<const double> w);
  /// Global index of each prunable position in the flat parameter vector.
  const std::vector<std::size_t>& prunable_positions() const { return prunable_to_flat_; }

  // --- mask -----------------------------------------------------------------
  const std::optional<SparsityMask>& mask() const { return mask_; }
  /// Stores the mask and zeroes the masked weights.
  void apply_mask(const SparsityMask& mask);
  void clear_mask();
  /// Re-zero masked weights (after an unmasked mutation of parameters).
  void enforce_mask();

  // --- forward / backward ---------------------------------------------------
  struct ForwardCache;
  /// Deterministic feature pass; caches activations when `cache` is given.
  FeatureBatch forward_features(const Batch& x, const std::vector<std::uint16_t>& y,
                                ForwardCache* cache = nullptr) const;
  /// Head on top of features; returns logits (n x classes).
  Batch forward_logits(const FeatureBatch& z, ForwardCache* cache = nullptr) const;

  /// Backward through the cached pass. Either gradient input may be empty:
  /// `dlogits` (n x classes) drives the head + extractor, `dfeatures`
  /// (n x feature_dim) adds a direct feature-space gradient. Returns a
  /// gradient aligned with params(). Chunk-deterministic under threading.
  std::vector<double> backward(const ForwardCache& cache, std::span<const double> dlogits,
                               std::span<const double> dfeatures) const;

  ForwardCache* new_cache() const;
  void free_cache(ForwardCache*) const;

  // convenience: features/logits for a dataset slice
  static Batch make_input(const data::DomainDataset& ds, std::span<const std::size_t> indices);
  static std::vector<std::uint16_t> make_labels(const data::DomainDataset& ds,
                                                std::span<const std::size_t> indices);

  /// Whether the flat parameter index belongs to the head (W2).
  bool is_head_param(std::size_t flat_index) const { return flat_index >= phi_param_count_; }
  std::size_t phi_param_count() const { return phi_param_count_; }

  /// Reinitialize the classifier head (fan-in scaled uniform), seeded.
  void reinit_head(std::uint64_t seed);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::string arch_id_;
  data::ImageShape input_;
  std::size_t classes_ = 0;
  std::size_t feature_dim_ = 0;
  std::uint64_t init_seed_ = 0;
  std::vector<double> params_;
  std::vector<TensorDesc> tensors_;
  std::vector<std::size_t> prunable_to_flat_;
  std::size_t phi_param_count_ = 0;
  std::optional<SparsityMask> mask_;
};

/// Known ids: tiny-mlp, tiny-conv, conv-small, vgg11-style, resnet18-style.
/// A "@k" suffix divides the width (e.g. "vgg11-style@8").
bool is_known_architecture(const std::string& arch_id);
std::vector<std::string> architecture_registry();

/// Adam with optional mask-respecting steps: masked weights take no update
/// and stay exactly zero.
class AdamOptimizer {
 public:
  AdamOptimizer(std::size_t param_count, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);
  /// One step at learning rate `lr`. When `trainable` is non-null only
  /// flagged entries move. Mask handling is read from the model.
  void step(SplitClassifier& m, std::span<const double> grads, double lr,
            const std::vector<std::uint8_t>* trainable = nullptr, bool respect_mask = true);

 private:
  std::vector<double> m_, v_;
  double beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
};

/// Mean cross-entropy training on one dataset (used by pretraining, scratch
/// training and fine-tuning). Deterministic given the config seed.
void train_supervised(SplitClassifier& m, const data::DomainDataset& train,
                      const SupervisedTrainConfig& cfg);

/// Top-1 accuracy over a full dataset.
double evaluate_accuracy(const SplitClassifier& m, const data::DomainDataset& ds,
                         std::size_t batch_size = 256);

// --- checkpoints ------------------------------------------------------------

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::string provenance;  // e.g. "pretrain" or "ntp-prune S=0.8"
};

void save_checkpoint(const SplitClassifier& m, const std::filesystem::path& dir,
                     const CheckpointMeta& meta);
struct LoadedCheckpoint {
  std::unique_ptr<SplitClassifier> model;
  CheckpointMeta meta;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace ntp::model
