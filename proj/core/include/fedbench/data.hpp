#pragma once

#include <iosfwd>
#include <optional>
#include <string>

#include "fedbench/model.hpp"

namespace fedbench {

enum class PoisonFlag { kClean, kFlipped, kTriggered };

struct Sample {
  Vec x;
  int label = 0;
  int domain = 0;
  PoisonFlag flag = PoisonFlag::kClean;

  bool operator==(const Sample&) const = default;
};

struct Dataset {
  std::vector<Sample> samples;
  int num_classes = 0;

  int dim() const { return samples.empty() ? 0 : static_cast<int>(samples[0].x.size()); }
  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  Batch to_batch() const;
  /// Per-class sample counts.
  std::vector<std::size_t> label_histogram() const;
  /// Shannon entropy (nats) of the label histogram.
  double label_entropy() const;
};

/// Gaussian cluster per class around the given centers.
Dataset make_blobs(int classes, int per_class, const std::vector<Vec>& centers, double sigma,
                   std::uint64_t seed);

/// Evenly spaced class centers on a circle in the first two coordinates,
/// embedded in `dim` dimensions.
std::vector<Vec> circle_centers(int classes, int dim, double radius);

struct PartitionConfig {
  int num_clients = 1;
  double beta = 0.5;  // Dirichlet concentration
  std::uint64_t seed = 0;
};

/// Label-skew split: per class, proportions over clients are drawn from
/// Dir(beta). Partitions are disjoint, their union is the input, and every
/// client is non-empty (one sample is moved from the largest client if a
/// draw leaves a client empty).
std::vector<Dataset> partition_dirichlet(const Dataset& data, const PartitionConfig& config);

/// Invertible affine map (rotation in the (0,1) plane, isotropic scale,
/// shift) plus additive Gaussian noise, applied to features only.
struct DomainTransform {
  std::string name;
  double rotate_deg = 0.0;
  double scale = 1.0;
  Vec shift;          // empty = zero shift
  double noise = 0.0; // additive N(0, noise^2)
};

Vec apply_domain_transform(const DomainTransform& t, const Vec& x, Rng& rng);

struct BlobSpec {
  int classes = 4;
  int dim = 2;
  int pad_dims = 0;  // constant-zero features appended after the gaussian ones
  int per_class_train = 200;
  int per_class_test = 50;
  double sigma = 0.5;
  double radius = 2.0;

  int total_dim() const { return dim + pad_dims; }
};

/// Appends `extra` constant-zero features to every sample (the desk-scale
/// analogue of an image's background border).
Dataset pad_features(const Dataset& data, int extra);

struct DomainSuite {
  std::vector<Dataset> clients;                          // one entry per client
  std::vector<std::pair<std::string, Dataset>> tests;    // named test collection
  std::optional<Dataset> unseen;                         // held-out domain
};

/// Domain-skew suite: every domain draws blobs with the same class layout
/// (identical label marginals) and then applies its own feature transform.
/// Clients are assigned round-robin to the participating domains. If
/// held_out names a domain, its data appears only in `unseen`.
DomainSuite make_domain_suite(const BlobSpec& base, const std::vector<DomainTransform>& domains,
                              int num_clients, const std::optional<std::string>& held_out,
                              std::uint64_t seed);

enum class FlipMode { kSymmetric, kPair };

/// Label corruption. Symmetric: keep with prob 1-eps, else uniform over the
/// other classes. Pair: flip to (c+1) mod classes with prob eps. Flipped
/// samples are flagged.
Dataset flip_labels(const Dataset& data, FlipMode mode, double epsilon, std::uint64_t seed);

/// Row `from` of the flip transition matrix for the given mode.
Vec flip_transition_row(FlipMode mode, int classes, double epsilon, int from);

struct BackdoorConfig {
  Vec mask;     // binary, length = feature dim
  Vec pattern;  // length = feature dim
  int target_label = 0;
  double varpi = 1.0;          // backdoor loss trade-off
  double poison_fraction = 0.5;  // fraction of a malicious client's data used in the backdoor term
};

/// x~ = (1-m) (.) x + m (.) pattern
Vec inject_trigger(const Vec& x, const BackdoorConfig& config);
Sample inject_trigger(const Sample& s, const BackdoorConfig& config);

/// CSV export/import: one row per sample (features..., label, domain, flag).
void write_dataset_csv(const Dataset& data, std::ostream& out);
Dataset read_dataset_csv(std::istream& in, int num_classes);
void write_dataset_csv_file(const Dataset& data, const std::string& path);
Dataset read_dataset_csv_file(const std::string& path, int num_classes);

}  // namespace fedbench
