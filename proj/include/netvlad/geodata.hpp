#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "netvlad/common.hpp"
#include "netvlad/descriptors.hpp"

namespace netvlad {

// Synthetic geotagged world. Places live on a grid; each place emits images
// at several timestamps ("conditions"), built from noisy copies of the
// place's latent prototype descriptors plus distractors drawn verbatim from
// a pool shared across places.
struct WorldConfig {
  int places = 200;
  int conditions = 3;                     // distinct capture epochs per place
  int images_per_place_per_condition = 2;
  int prototypes_per_place = 48;
  int landmarks_per_image = 40;           // sampled without replacement
  int distractors_per_image = 24;
  int descriptor_dim = 32;
  int distractor_pool_size = 256;
  int distractor_modes = 4;
  double distractor_mode_sigma = 0.25;
  double viewpoint_noise = 0.05;
  double condition_shift = 0.7;
  double gps_jitter_m = 2.0;
  double place_spacing_m = 100.0;
  std::array<double, 3> split_fractions{1.0 / 3, 1.0 / 3, 1.0 / 3};
  // "without Time Machine" control: the train split keeps its timestamps but
  // every image gets condition 0's appearance
  bool train_single_condition = false;
  std::uint64_t seed = 0;
};

void validate(const WorldConfig& cfg);

enum class Split : int { Train = 0, Val = 1, Test = 2 };
enum class Role : int { Database = 0, Query = 1 };

const char* to_string(Split s);
const char* to_string(Role r);
Split split_from_string(const std::string& s);
Role role_from_string(const std::string& s);

struct GeoImage {
  ImageId id = 0;
  double x = 0;
  double y = 0;
  std::int64_t timestamp_days = 0;
  int condition = 0;
  int place = 0;
  Role role = Role::Database;
  Split split = Split::Train;
};

struct Dataset {
  int descriptor_dim = 0;
  WorldConfig config;                        // provenance echo
  std::vector<GeoImage> images;              // ascending id
  std::vector<MatrixX<float>> descriptors;   // parallel to images

  std::size_t size() const { return images.size(); }
  std::vector<std::size_t> indices_of(Split split) const;
  std::size_t index_of(ImageId id) const;

  template <class S>
  DescriptorMap<S> map(std::size_t idx) const {
    DescriptorMap<S> m;
    m.image_id = images[idx].id;
    m.descriptors = descriptors[idx].template cast<S>();
    return m;
  }
};

Dataset generate_world(const WorldConfig& cfg);

// Partitions places (never individual images) into train/val/test by spatial
// tiling along x; returns places per split. A split with a positive fraction
// but no places is an error.
std::array<int, 3> split_geographic(Dataset& dataset,
                                    const std::array<double, 3>& fractions);

struct TrainingTuple {
  ImageId query_id = 0;
  std::vector<ImageId> positive_ids;  // within 10 m, >= 31 days away
  std::vector<ImageId> negative_ids;  // beyond 25 m, >= 31 days away
};

struct TupleBuildReport {
  int queries_total = 0;
  int dropped_no_positive = 0;
  int dropped_no_negative = 0;  // a tuple needs at least one of each
};

inline constexpr double kPositiveRadiusM = 10.0;
inline constexpr double kNegativeRadiusM = 25.0;
inline constexpr std::int64_t kMinTimeGapDays = 31;

std::vector<TrainingTuple> build_tuples(const Dataset& dataset, Split split,
                                        TupleBuildReport* report = nullptr);

std::uint64_t dataset_content_hash(const Dataset& dataset);

}  // namespace netvlad
