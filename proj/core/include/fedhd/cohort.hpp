#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedhd/matrix.hpp"
#include "fedhd/slide.hpp"

namespace fedhd {

// Ground-truth generative mixture for one class: component means plus
// per-dimension variances.
struct ClassMixture {
  std::vector<Vector> means;
  std::vector<Vector> variances;
};

struct ClientSpec {
  std::string client_id;
  std::vector<double> class_priors;  // sums to 1
  Vector domain_offset;              // added to every patch of this client
  int slide_count = 0;
};

struct CohortSpec {
  int class_count = 2;
  int dim = 32;
  int patches_min = 150;
  int patches_max = 250;
  double test_fraction = 0.3;
  std::vector<ClassMixture> class_mixtures;  // one per class
  std::vector<ClientSpec> clients;
};

// Config-level description; build_cohort_spec expands it into explicit
// mixtures (means on a seeded sphere of mixture_radius) and client offsets
// (seeded directions of norm shift_norm).
struct CohortParams {
  int client_count = 3;
  int class_count = 2;
  int dim = 32;
  int components_per_class = 3;
  double mixture_radius = 3.0;
  double component_std = 1.0;
  double shift_norm = 0.5;
  int slides_per_client = 40;
  int patches_min = 150;
  int patches_max = 250;
  double test_fraction = 0.3;
  // One prior vector per client; empty means uniform priors everywhere.
  std::vector<std::vector<double>> client_priors;
};

CohortSpec build_cohort_spec(const CohortParams& params, std::uint64_t seed);

// One client's generated data, already stratified into train/test.
struct ClientBags {
  std::string client_id;
  std::vector<RealSlide> train;
  std::vector<RealSlide> test;
};

// Pure function of (spec, seed). Every (client, split, class) cell is
// non-empty; throws "class unrepresentable" when a client's prior gives a
// class zero probability.
std::vector<ClientBags> generate_cohort(const CohortSpec& spec, std::uint64_t seed);

// --- Bag file format -------------------------------------------------------
// magic "FBAG" | version u16 | flags u16 | K u32 | d u32 | label u32 |
// K*d little-endian 32-bit floats, row-major. Header is 20 bytes.

void write_bag(const std::string& path, const FeatureBag& bag);
FeatureBag read_bag(const std::string& path);

// --- Manifest ---------------------------------------------------------------
// CSV: slide_id,client_id,label,split,source_slide_id,path
// source_slide_id is empty for real slides. Paths are stored relative to the
// manifest's directory.

struct ManifestEntry {
  std::string slide_id;
  std::string client_id;
  int label = 0;
  std::string split;  // "train" | "test"
  std::string source_slide_id;
  std::string path;
};

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::string& path);

// Materializes a cohort: bags under <out_dir>/bags plus <out_dir>/manifest.csv.
// Refuses to overwrite an existing manifest unless force.
std::string write_cohort(const std::string& out_dir, const std::vector<ClientBags>& cohort,
                         bool force);

// Loads every referenced bag, grouped per client. Errors name the offending
// manifest row.
std::vector<ClientBags> load_cohort(const std::string& manifest_path);

}  // namespace fedhd
