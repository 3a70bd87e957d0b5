#include "fedbench/data.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace fedbench {

Batch Dataset::to_batch() const {
  Batch b;
  b.inputs = Mat(static_cast<int>(samples.size()), dim());
  b.labels.resize(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (int j = 0; j < b.inputs.cols; ++j) b.inputs(static_cast<int>(i), j) = samples[i].x[j];
    b.labels[i] = samples[i].label;
  }
  return b;
}

std::vector<std::size_t> Dataset::label_histogram() const {
  std::vector<std::size_t> h(num_classes, 0);
  for (const Sample& s : samples) h[s.label]++;
  return h;
}

double Dataset::label_entropy() const {
  const auto h = label_histogram();
  const double n = static_cast<double>(samples.size());
  double e = 0.0;
  for (std::size_t c : h) {
    if (c == 0) continue;
    const double p = c / n;
    e -= p * std::log(p);
  }
  return e;
}

std::vector<Vec> circle_centers(int classes, int dim, double radius) {
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  std::vector<Vec> centers(classes, Vec(dim, 0.0));
  for (int c = 0; c < classes; ++c) {
    const double angle = kTwoPi * c / classes;
    centers[c][0] = radius * std::cos(angle);
    if (dim > 1) centers[c][1] = radius * std::sin(angle);
  }
  return centers;
}

Dataset make_blobs(int classes, int per_class, const std::vector<Vec>& centers, double sigma,
                   std::uint64_t seed) {
  if (classes < 2) throw ConfigError("make_blobs: need at least 2 classes");
  if (sigma < 0.0) throw ConfigError("make_blobs: sigma must be >= 0");
  if (static_cast<int>(centers.size()) != classes) {
    throw ConfigError("make_blobs: centers count != classes");
  }
  Rng rng(seed);
  Dataset d;
  d.num_classes = classes;
  d.samples.reserve(static_cast<std::size_t>(classes) * per_class);
  for (int c = 0; c < classes; ++c) {
    for (int i = 0; i < per_class; ++i) {
      Sample s;
      s.label = c;
      s.x.resize(centers[c].size());
      for (std::size_t j = 0; j < s.x.size(); ++j) s.x[j] = centers[c][j] + sigma * rng.gaussian();
      d.samples.push_back(std::move(s));
    }
  }
  return d;
}

Dataset pad_features(const Dataset& data, int extra) {
  if (extra < 0) throw ConfigError("pad_features: extra must be >= 0");
  if (extra == 0) return data;
  Dataset out = data;
  for (Sample& s : out.samples) s.x.resize(s.x.size() + extra, 0.0);
  return out;
}

std::vector<Dataset> partition_dirichlet(const Dataset& data, const PartitionConfig& config) {
  if (config.beta <= 0.0) throw ConfigError("partition: beta must be > 0");
  if (config.num_clients < 1) throw ConfigError("partition: need at least 1 client");
  if (static_cast<std::size_t>(config.num_clients) > data.size()) {
    throw ConfigError("partition: more clients than samples");
  }
  const int m = config.num_clients;
  Rng rng(config.seed);

  std::vector<Dataset> clients(m);
  for (Dataset& c : clients) c.num_classes = data.num_classes;

  for (int cls = 0; cls < data.num_classes; ++cls) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (data.samples[i].label == cls) idx.push_back(i);
    }
    if (idx.empty()) continue;
    rng.shuffle(idx);
    const Vec p = rng.dirichlet(config.beta, m);

    // largest-remainder apportionment of |idx| samples to proportions p
    const std::size_t n = idx.size();
    std::vector<std::size_t> counts(m, 0);
    std::vector<std::pair<double, int>> rema(m);
    std::size_t assigned = 0;
    for (int j = 0; j < m; ++j) {
      const double exact = p[j] * static_cast<double>(n);
      counts[j] = static_cast<std::size_t>(std::floor(exact));
      assigned += counts[j];
      rema[j] = {exact - std::floor(exact), j};
    }
    std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (std::size_t k = 0; assigned < n; ++k, ++assigned) counts[rema[k % m].second]++;

    std::size_t off = 0;
    for (int j = 0; j < m; ++j) {
      for (std::size_t k = 0; k < counts[j]; ++k) {
        clients[j].samples.push_back(data.samples[idx[off++]]);
      }
    }
  }

  // repair empty clients: move one sample from the largest client
  for (int j = 0; j < m; ++j) {
    if (!clients[j].empty()) continue;
    int largest = 0;
    for (int k = 1; k < m; ++k) {
      if (clients[k].size() > clients[largest].size()) largest = k;
    }
    if (clients[largest].size() < 2) throw ConfigError("partition: cannot repair empty client");
    clients[j].samples.push_back(clients[largest].samples.back());
    clients[largest].samples.pop_back();
  }
  return clients;
}

Vec apply_domain_transform(const DomainTransform& t, const Vec& x, Rng& rng) {
  constexpr double kPi = 3.1415926535897932384626433832795;
  Vec y = x;
  if (t.rotate_deg != 0.0 && y.size() >= 2) {
    const double a = t.rotate_deg * kPi / 180.0;
    const double c = std::cos(a);
    const double s = std::sin(a);
    const double x0 = y[0];
    const double x1 = y[1];
    y[0] = c * x0 - s * x1;
    y[1] = s * x0 + c * x1;
  }
  if (t.scale != 1.0) {
    for (double& v : y) v *= t.scale;
  }
  if (!t.shift.empty()) {
    if (t.shift.size() != y.size()) throw ConfigError("domain shift length != feature dim");
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += t.shift[i];
  }
  if (t.noise > 0.0) {
    for (double& v : y) v += t.noise * rng.gaussian();
  }
  return y;
}

DomainSuite make_domain_suite(const BlobSpec& base, const std::vector<DomainTransform>& domains,
                              int num_clients, const std::optional<std::string>& held_out,
                              std::uint64_t seed) {
  if (domains.size() < 2) throw ConfigError("domain suite: need at least 2 domains");
  int held_idx = -1;
  if (held_out) {
    for (std::size_t i = 0; i < domains.size(); ++i) {
      if (domains[i].name == *held_out) held_idx = static_cast<int>(i);
    }
    if (held_idx < 0) throw ConfigError("domain suite: unknown held-out domain '" + *held_out + "'");
  }

  const auto centers = circle_centers(base.classes, base.dim, base.radius);
  DomainSuite suite;
  suite.clients.resize(num_clients);
  for (Dataset& c : suite.clients) c.num_classes = base.classes;

  std::vector<int> participating;
  for (int d = 0; d < static_cast<int>(domains.size()); ++d) {
    if (d != held_idx) participating.push_back(d);
  }
  if (participating.empty()) throw ConfigError("domain suite: no participating domain left");

  for (int d = 0; d < static_cast<int>(domains.size()); ++d) {
    Rng drng = Rng::derive(seed, 0xD0A1u, static_cast<std::uint64_t>(d));
    // identical label marginals across domains: same per-class counts
    Dataset train = make_blobs(base.classes, base.per_class_train, centers, base.sigma,
                               drng.next_u64());
    Dataset test = make_blobs(base.classes, base.per_class_test, centers, base.sigma,
                              drng.next_u64());
    for (Sample& s : train.samples) {
      s.x = apply_domain_transform(domains[d], s.x, drng);
      s.domain = d;
    }
    for (Sample& s : test.samples) {
      s.x = apply_domain_transform(domains[d], s.x, drng);
      s.domain = d;
    }
    if (d == held_idx) {
      suite.unseen = std::move(test);
      continue;
    }
    suite.tests.emplace_back(domains[d].name, std::move(test));

    // split this domain's training data over its clients (round-robin domain
    // assignment: client i belongs to participating[i % P])
    std::vector<int> owners;
    for (int i = 0; i < num_clients; ++i) {
      if (participating[i % participating.size()] == d) owners.push_back(i);
    }
    if (owners.empty()) continue;
    std::vector<std::size_t> idx(train.size());
    std::iota(idx.begin(), idx.end(), 0);
    drng.shuffle(idx);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      suite.clients[owners[k % owners.size()]].samples.push_back(train.samples[idx[k]]);
    }
  }

  for (const Dataset& c : suite.clients) {
    if (c.empty()) throw ConfigError("domain suite: a client received no data (too many clients?)");
  }
  return suite;
}

Vec flip_transition_row(FlipMode mode, int classes, double epsilon, int from) {
  Vec row(classes, 0.0);
  if (mode == FlipMode::kSymmetric) {
    for (int to = 0; to < classes; ++to) {
      row[to] = (to == from) ? 1.0 - epsilon : epsilon / (classes - 1);
    }
  } else {
    row[from] = 1.0 - epsilon;
    row[(from + 1) % classes] += epsilon;
  }
  return row;
}

Dataset flip_labels(const Dataset& data, FlipMode mode, double epsilon, std::uint64_t seed) {
  if (epsilon < 0.0 || epsilon >= 1.0) throw ConfigError("flip_labels: epsilon must be in [0,1)");
  Rng rng(seed);
  Dataset out = data;
  if (epsilon == 0.0) return out;
  for (Sample& s : out.samples) {
    if (rng.uniform() >= epsilon) continue;
    int target;
    if (mode == FlipMode::kPair) {
      target = (s.label + 1) % data.num_classes;
    } else {
      // uniform over the other classes
      const std::size_t r = rng.index(static_cast<std::size_t>(data.num_classes - 1));
      target = static_cast<int>(r) + (static_cast<int>(r) >= s.label ? 1 : 0);
    }
    s.label = target;
    s.flag = PoisonFlag::kFlipped;
  }
  return out;
}

Vec inject_trigger(const Vec& x, const BackdoorConfig& config) {
  if (config.mask.size() != x.size() || config.pattern.size() != x.size()) {
    throw ConfigError("inject_trigger: mask/pattern length != feature dim");
  }
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = (1.0 - config.mask[i]) * x[i] + config.mask[i] * config.pattern[i];
  }
  return y;
}

Sample inject_trigger(const Sample& s, const BackdoorConfig& config) {
  Sample out = s;
  out.x = inject_trigger(s.x, config);
  out.flag = PoisonFlag::kTriggered;
  return out;
}

namespace {

const char* flag_name(PoisonFlag f) {
  switch (f) {
    case PoisonFlag::kClean: return "clean";
    case PoisonFlag::kFlipped: return "flipped";
    case PoisonFlag::kTriggered: return "triggered";
  }
  return "clean";
}

PoisonFlag flag_from(const std::string& s) {
  if (s == "clean") return PoisonFlag::kClean;
  if (s == "flipped") return PoisonFlag::kFlipped;
  if (s == "triggered") return PoisonFlag::kTriggered;
  throw ConfigError("dataset csv: unknown poison flag '" + s + "'");
}

}  // namespace

void write_dataset_csv(const Dataset& data, std::ostream& out) {
  const int d = data.dim();
  for (int j = 0; j < d; ++j) out << "x" << j << ",";
  out << "label,domain,flag\n";
  char buf[64];
  for (const Sample& s : data.samples) {
    for (double v : s.x) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << buf << ",";
    }
    out << s.label << "," << s.domain << "," << flag_name(s.flag) << "\n";
  }
}

Dataset read_dataset_csv(std::istream& in, int num_classes) {
  Dataset d;
  d.num_classes = num_classes;
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("dataset csv: missing header");
  const int ncols = static_cast<int>(std::count(line.begin(), line.end(), ',')) + 1;
  const int dim = ncols - 3;
  if (dim < 1) throw ConfigError("dataset csv: malformed header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    Sample s;
    s.x.resize(dim);
    for (int j = 0; j < dim; ++j) {
      if (!std::getline(ls, cell, ',')) throw ConfigError("dataset csv: truncated row");
      s.x[j] = std::stod(cell);
    }
    if (!std::getline(ls, cell, ',')) throw ConfigError("dataset csv: missing label");
    s.label = std::stoi(cell);
    if (!std::getline(ls, cell, ',')) throw ConfigError("dataset csv: missing domain");
    s.domain = std::stoi(cell);
    if (!std::getline(ls, cell, ',')) throw ConfigError("dataset csv: missing flag");
    s.flag = flag_from(cell);
    d.samples.push_back(std::move(s));
  }
  return d;
}

void write_dataset_csv_file(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open for write: " + path);
  write_dataset_csv(data, out);
}

Dataset read_dataset_csv_file(const std::string& path, int num_classes) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open for read: " + path);
  return read_dataset_csv(in, num_classes);
}

}  // namespace fedbench
