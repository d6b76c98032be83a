#include "fedhd/cohort.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "fedhd/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "bag file format assumes a little-endian host");

namespace fedhd {
namespace {

constexpr std::uint64_t kMixtureSalt = 0x6d6978;   // "mix"
constexpr std::uint64_t kOffsetSalt = 0x6f6666;    // "off"
constexpr std::uint64_t kClientSalt = 0x636c69;    // "cli"

Vector random_direction(RngStream& rng, int dim) {
  Vector v = rng.normal_vector(dim);
  const double norm = v.norm();
  return norm > 0 ? Vector(v / norm) : Vector::Unit(dim, 0);
}

int draw_label(RngStream& rng, const std::vector<double>& priors) {
  double u = rng.uniform();
  for (std::size_t c = 0; c < priors.size(); ++c) {
    u -= priors[c];
    if (u < 0.0) return static_cast<int>(c);
  }
  return static_cast<int>(priors.size()) - 1;
}

}  // namespace

CohortSpec build_cohort_spec(const CohortParams& params, std::uint64_t seed) {
  if (params.client_count < 1 || params.class_count < 2 || params.dim < 1)
    throw std::invalid_argument("cohort: bad params");
  if (params.components_per_class < 1)
    throw std::invalid_argument("cohort: components_per_class must be >= 1");
  if (!params.client_priors.empty() &&
      static_cast<int>(params.client_priors.size()) != params.client_count)
    throw std::invalid_argument("cohort: one prior vector per client required");

  CohortSpec spec;
  spec.class_count = params.class_count;
  spec.dim = params.dim;
  spec.patches_min = params.patches_min;
  spec.patches_max = params.patches_max;
  spec.test_fraction = params.test_fraction;

  RngStream mix_rng = spawn_stream(seed, kMixtureSalt);
  spec.class_mixtures.resize(static_cast<std::size_t>(params.class_count));
  for (auto& mixture : spec.class_mixtures) {
    for (int m = 0; m < params.components_per_class; ++m) {
      mixture.means.push_back(random_direction(mix_rng, params.dim) *
                              params.mixture_radius);
      mixture.variances.push_back(Vector::Constant(
          params.dim, params.component_std * params.component_std));
    }
  }

  RngStream off_rng = spawn_stream(seed, kOffsetSalt);
  for (int c = 0; c < params.client_count; ++c) {
    ClientSpec client;
    client.client_id = "c" + std::to_string(c);
    client.slide_count = params.slides_per_client;
    client.domain_offset = random_direction(off_rng, params.dim) * params.shift_norm;
    if (params.client_priors.empty()) {
      client.class_priors.assign(static_cast<std::size_t>(params.class_count),
                                 1.0 / params.class_count);
    } else {
      client.class_priors = params.client_priors[static_cast<std::size_t>(c)];
    }
    spec.clients.push_back(std::move(client));
  }
  return spec;
}

std::vector<ClientBags> generate_cohort(const CohortSpec& spec, std::uint64_t seed) {
  if (spec.class_count < 2) throw std::invalid_argument("cohort: class_count must be >= 2");
  if (static_cast<int>(spec.class_mixtures.size()) != spec.class_count)
    throw std::invalid_argument("cohort: one mixture per class required");
  if (spec.patches_min < 2 || spec.patches_max < spec.patches_min)
    throw std::invalid_argument("cohort: bad patch range");
  if (spec.test_fraction <= 0.0 || spec.test_fraction >= 1.0)
    throw std::invalid_argument("cohort: test_fraction must be in (0, 1)");

  std::vector<ClientBags> cohort;
  cohort.reserve(spec.clients.size());
  for (std::size_t ci = 0; ci < spec.clients.size(); ++ci) {
    const ClientSpec& client = spec.clients[ci];
    if (static_cast<int>(client.class_priors.size()) != spec.class_count)
      throw std::invalid_argument("cohort: prior length mismatch for " + client.client_id);
    double prior_sum = 0.0;
    for (double p : client.class_priors) {
      if (p <= 0.0)
        throw std::invalid_argument("cohort: class unrepresentable for client " +
                                    client.client_id);
      prior_sum += p;
    }
    if (std::abs(prior_sum - 1.0) > 1e-9)
      throw std::invalid_argument("cohort: priors must sum to 1 for " + client.client_id);
    if (client.slide_count < 2 * spec.class_count)
      throw std::invalid_argument("cohort: too few slides to stratify for " +
                                  client.client_id);

    RngStream rng = spawn_stream(seed, mix64(kClientSalt, static_cast<std::uint64_t>(ci)));

    // Labels drawn iid from the prior, then repaired so every class has at
    // least two slides (one per split).
    std::vector<int> labels(static_cast<std::size_t>(client.slide_count));
    for (auto& l : labels) l = draw_label(rng, client.class_priors);
    std::vector<int> counts(static_cast<std::size_t>(spec.class_count), 0);
    for (int l : labels) ++counts[static_cast<std::size_t>(l)];
    for (int c = 0; c < spec.class_count; ++c) {
      while (counts[static_cast<std::size_t>(c)] < 2) {
        const int donor = static_cast<int>(
            std::max_element(counts.begin(), counts.end()) - counts.begin());
        auto it = std::find(labels.rbegin(), labels.rend(), donor);
        *it = c;
        --counts[static_cast<std::size_t>(donor)];
        ++counts[static_cast<std::size_t>(c)];
      }
    }

    ClientBags bags;
    bags.client_id = client.client_id;
    std::vector<RealSlide> slides;
    slides.reserve(labels.size());
    const std::uint64_t patch_span =
        static_cast<std::uint64_t>(spec.patches_max - spec.patches_min + 1);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const auto& mixture = spec.class_mixtures[static_cast<std::size_t>(labels[i])];
      const int k = spec.patches_min + static_cast<int>(rng.uniform_int(patch_span));
      RealSlide slide;
      std::ostringstream id;
      id << client.client_id << "_s";
      id.width(3);
      id.fill('0');
      id << i;
      slide.slide_id = id.str();
      slide.label = labels[i];
      slide.features.resize(k, spec.dim);
      const int m_gen = static_cast<int>(mixture.means.size());
      for (int p = 0; p < k; ++p) {
        const int m = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(m_gen)));
        Vector z = rng.normal_vector(spec.dim);
        slide.features.row(p) =
            (mixture.means[static_cast<std::size_t>(m)].array() +
             client.domain_offset.array() +
             mixture.variances[static_cast<std::size_t>(m)].array().sqrt() * z.array())
                .transpose();
      }
      slides.push_back(std::move(slide));
    }

    // Stratified split: per class, a seeded shuffle then the first
    // round(fraction * n) slides go to test, keeping >= 1 on each side.
    for (int c = 0; c < spec.class_count; ++c) {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < slides.size(); ++i)
        if (slides[i].label == c) idx.push_back(i);
      rng.shuffle(idx);
      const int n = static_cast<int>(idx.size());
      int n_test = static_cast<int>(std::lround(spec.test_fraction * n));
      n_test = std::clamp(n_test, 1, n - 1);
      for (int i = 0; i < n; ++i) {
        if (i < n_test)
          bags.test.push_back(slides[idx[static_cast<std::size_t>(i)]]);
        else
          bags.train.push_back(slides[idx[static_cast<std::size_t>(i)]]);
      }
    }
    auto by_id = [](const RealSlide& a, const RealSlide& b) {
      return a.slide_id < b.slide_id;
    };
    std::sort(bags.train.begin(), bags.train.end(), by_id);
    std::sort(bags.test.begin(), bags.test.end(), by_id);
    cohort.push_back(std::move(bags));
  }
  return cohort;
}

// --- Bag I/O -----------------------------------------------------------------

namespace {

constexpr char kBagMagic[4] = {'F', 'B', 'A', 'G'};
constexpr std::uint16_t kBagVersion = 1;
constexpr std::size_t kBagHeaderBytes = 20;

template <typename T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

}  // namespace

void write_bag(const std::string& path, const FeatureBag& bag) {
  if (!all_finite(bag.features))
    throw std::invalid_argument("write_bag: non-finite features in " + bag.slide_id);
  if (bag.label < 0) throw std::invalid_argument("write_bag: negative label");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_bag: cannot open " + path);
  out.write(kBagMagic, 4);
  write_pod<std::uint16_t>(out, kBagVersion);
  write_pod<std::uint16_t>(out, 0);  // flags, reserved
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(bag.features.rows()));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(bag.features.cols()));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(bag.label));
  std::vector<float> row(static_cast<std::size_t>(bag.features.cols()));
  for (Eigen::Index r = 0; r < bag.features.rows(); ++r) {
    for (Eigen::Index c = 0; c < bag.features.cols(); ++c)
      row[static_cast<std::size_t>(c)] = static_cast<float>(bag.features(r, c));
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(sizeof(float) * row.size()));
  }
  if (!out) throw std::runtime_error("write_bag: write failed for " + path);
}

FeatureBag read_bag(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("read_bag: cannot open " + path);
  const std::size_t actual = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  if (actual < kBagHeaderBytes)
    throw std::runtime_error("read_bag: truncated header in " + path + ": expected >= " +
                             std::to_string(kBagHeaderBytes) + " bytes, got " +
                             std::to_string(actual));
  char magic[4];
  in.read(magic, 4);
  if (std::memcmp(magic, kBagMagic, 4) != 0)
    throw std::runtime_error("read_bag: bad magic in " + path);
  std::uint16_t version = 0, flags = 0;
  std::uint32_t k = 0, d = 0, label = 0;
  in.read(reinterpret_cast<char*>(&version), 2);
  in.read(reinterpret_cast<char*>(&flags), 2);
  in.read(reinterpret_cast<char*>(&k), 4);
  in.read(reinterpret_cast<char*>(&d), 4);
  in.read(reinterpret_cast<char*>(&label), 4);
  if (version != kBagVersion)
    throw std::runtime_error("read_bag: unsupported version " + std::to_string(version) +
                             " in " + path);
  const std::size_t expected =
      kBagHeaderBytes + 4ull * static_cast<std::size_t>(k) * static_cast<std::size_t>(d);
  if (actual != expected)
    throw std::runtime_error("read_bag: truncated file " + path + ": expected " +
                             std::to_string(expected) + " bytes, got " +
                             std::to_string(actual));
  FeatureBag bag;
  bag.label = static_cast<int>(label);
  bag.features.resize(k, d);
  std::vector<float> row(static_cast<std::size_t>(d));
  for (std::uint32_t r = 0; r < k; ++r) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(sizeof(float) * row.size()));
    for (std::uint32_t c = 0; c < d; ++c)
      bag.features(r, c) = static_cast<double>(row[c]);
  }
  if (!in) throw std::runtime_error("read_bag: read failed for " + path);
  return bag;
}

// --- Manifest ----------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

constexpr const char* kManifestHeader =
    "slide_id,client_id,label,split,source_slide_id,path";

}  // namespace

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::map<std::string, int> seen;
  for (const auto& e : entries) {
    if (++seen[e.slide_id] > 1)
      throw std::invalid_argument("write_manifest: duplicate slide_id '" + e.slide_id + "'");
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_manifest: cannot open " + path);
  out << kManifestHeader << "\n";
  for (const auto& e : entries) {
    out << e.slide_id << ',' << e.client_id << ',' << e.label << ',' << e.split << ','
        << e.source_slide_id << ',' << e.path << "\n";
  }
  if (!out) throw std::runtime_error("write_manifest: write failed for " + path);
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_manifest: cannot open " + path);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("read_manifest: empty manifest " + path);
  if (line != kManifestHeader)
    throw std::runtime_error("read_manifest: bad header in " + path);
  std::vector<ManifestEntry> entries;
  std::map<std::string, int> seen;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != 6)
      throw std::runtime_error("read_manifest: line " + std::to_string(line_no) +
                               ": expected 6 fields, got " + std::to_string(fields.size()));
    ManifestEntry e;
    e.slide_id = fields[0];
    e.client_id = fields[1];
    try {
      e.label = std::stoi(fields[2]);
    } catch (const std::exception&) {
      throw std::runtime_error("read_manifest: line " + std::to_string(line_no) +
                               ": bad label '" + fields[2] + "'");
    }
    e.split = fields[3];
    e.source_slide_id = fields[4];
    e.path = fields[5];
    if (++seen[e.slide_id] > 1)
      throw std::runtime_error("read_manifest: line " + std::to_string(line_no) +
                               ": duplicate slide_id '" + e.slide_id + "'");
    entries.push_back(std::move(e));
  }
  return entries;
}

std::string write_cohort(const std::string& out_dir, const std::vector<ClientBags>& cohort,
                         bool force) {
  namespace fs = std::filesystem;
  const fs::path root(out_dir);
  const fs::path manifest_path = root / "manifest.csv";
  if (fs::exists(manifest_path) && !force)
    throw std::runtime_error("write_cohort: " + manifest_path.string() +
                             " exists (use --force to overwrite)");
  fs::create_directories(root / "bags");
  std::vector<ManifestEntry> entries;
  for (const auto& client : cohort) {
    auto emit = [&](const std::vector<RealSlide>& slides, const std::string& split) {
      for (const auto& slide : slides) {
        const std::string rel = "bags/" + slide.slide_id + ".fbag";
        write_bag((root / rel).string(), slide);
        entries.push_back({slide.slide_id, client.client_id, slide.label, split, "", rel});
      }
    };
    emit(client.train, "train");
    emit(client.test, "test");
  }
  write_manifest(manifest_path.string(), entries);
  return manifest_path.string();
}

std::vector<ClientBags> load_cohort(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  const auto entries = read_manifest(manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();
  std::map<std::string, ClientBags> clients;
  int row = 1;
  for (const auto& e : entries) {
    ++row;
    fs::path bag_path(e.path);
    if (bag_path.is_relative()) bag_path = base / bag_path;
    FeatureBag bag;
    try {
      bag = read_bag(bag_path.string());
    } catch (const std::exception& ex) {
      throw std::runtime_error("load_cohort: manifest row " + std::to_string(row) +
                               " (slide '" + e.slide_id + "'): " + ex.what());
    }
    bag.slide_id = e.slide_id;
    bag.label = e.label;
    auto& client = clients[e.client_id];
    client.client_id = e.client_id;
    if (e.split == "test")
      client.test.push_back(std::move(bag));
    else
      client.train.push_back(std::move(bag));
  }
  std::vector<ClientBags> out;
  out.reserve(clients.size());
  for (auto& [id, bags] : clients) out.push_back(std::move(bags));
  return out;
}

}  // namespace fedhd
