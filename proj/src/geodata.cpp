#include "netvlad/geodata.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

#include "netvlad/rng.hpp"

namespace netvlad {

namespace {

constexpr std::int64_t kConditionSpacingDays = 40;

Eigen::VectorXd unit_vector(Rng& rng, int dim) {
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v(i) = rng.normal();
  const double norm = v.norm();
  return norm > 0 ? Eigen::VectorXd(v / norm) : v;
}

struct PlaceRef {
  double x;
  double y;
  int place;
};

// largest-remainder apportionment of `total` among normalized fractions
std::array<int, 3> apportion(int total, const std::array<double, 3>& fractions) {
  double sum = fractions[0] + fractions[1] + fractions[2];
  if (!(sum > 0) || fractions[0] < 0 || fractions[1] < 0 || fractions[2] < 0) {
    throw ValidationError("split fractions must be nonnegative with a positive sum");
  }
  std::array<int, 3> counts{};
  std::array<double, 3> remainders{};
  int assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double share = fractions[i] / sum * total;
    counts[i] = static_cast<int>(std::floor(share));
    remainders[i] = share - counts[i];
    assigned += counts[i];
  }
  while (assigned < total) {
    int pick = 0;
    for (int i = 1; i < 3; ++i) {
      if (remainders[i] > remainders[pick]) pick = i;
    }
    ++counts[pick];
    remainders[pick] = -1;
    ++assigned;
  }
  return counts;
}

// walk places in spatial order (x, then y) and cut at the apportioned counts
std::vector<Split> tile_places(std::vector<PlaceRef> places,
                               const std::array<double, 3>& fractions) {
  const auto counts = apportion(static_cast<int>(places.size()), fractions);
  for (int s = 0; s < 3; ++s) {
    if (fractions[s] > 0 && counts[s] == 0) {
      throw ValidationError(std::string("split '") + to_string(static_cast<Split>(s)) +
                            "' received zero places");
    }
  }
  std::sort(places.begin(), places.end(), [](const PlaceRef& a, const PlaceRef& b) {
    return std::tie(a.x, a.y, a.place) < std::tie(b.x, b.y, b.place);
  });
  int max_place = 0;
  for (const auto& p : places) max_place = std::max(max_place, p.place);
  std::vector<Split> by_place(max_place + 1, Split::Train);
  std::size_t at = 0;
  for (int s = 0; s < 3; ++s) {
    for (int i = 0; i < counts[s]; ++i, ++at) {
      by_place[places[at].place] = static_cast<Split>(s);
    }
  }
  return by_place;
}

}  // namespace

const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

const char* to_string(Role r) {
  return r == Role::Database ? "db" : "query";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ValidationError("unknown split '" + s + "'");
}

Role role_from_string(const std::string& s) {
  if (s == "db") return Role::Database;
  if (s == "query") return Role::Query;
  throw ValidationError("unknown role '" + s + "'");
}

void validate(const WorldConfig& cfg) {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw ValidationError(std::string("world config: ") + name + " must be >= 1");
  };
  positive(cfg.places, "places");
  positive(cfg.conditions, "conditions");
  positive(cfg.images_per_place_per_condition, "images_per_place_per_condition");
  positive(cfg.prototypes_per_place, "prototypes_per_place");
  positive(cfg.landmarks_per_image, "landmarks_per_image");
  positive(cfg.descriptor_dim, "descriptor_dim");
  if (cfg.conditions < 2) {
    throw ValidationError("world config: need >= 2 conditions so every place spans distinct timestamps");
  }
  if (cfg.images_per_place_per_condition > 9) {
    throw ValidationError("world config: more than 9 images per place and condition would "
                          "narrow the cross-condition time gap below 31 days");
  }
  if (cfg.landmarks_per_image > cfg.prototypes_per_place) {
    throw ValidationError("world config: landmarks_per_image cannot exceed prototypes_per_place");
  }
  if (cfg.distractors_per_image < 0) {
    throw ValidationError("world config: distractors_per_image must be >= 0");
  }
  if (cfg.distractors_per_image > 0 &&
      (cfg.distractor_pool_size < 1 || cfg.distractor_modes < 1 ||
       cfg.distractor_modes > cfg.distractor_pool_size)) {
    throw ValidationError("world config: distractor pool needs >= 1 entries and 1 <= modes <= pool size");
  }
  if (cfg.viewpoint_noise < 0 || cfg.condition_shift < 0 || cfg.gps_jitter_m < 0 ||
      cfg.distractor_mode_sigma < 0) {
    throw ValidationError("world config: noise magnitudes must be nonnegative");
  }
  if (cfg.place_spacing_m < 50.0) {
    // the grid pitch is the tiling gutter; below 50 m the 25 m evaluation
    // radius could reach across split boundaries
    throw ValidationError("world config: place_spacing_m must be >= 50");
  }
}

std::vector<std::size_t> Dataset::indices_of(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].split == split) out.push_back(i);
  }
  return out;
}

std::size_t Dataset::index_of(ImageId id) const {
  auto it = std::lower_bound(images.begin(), images.end(), id,
                             [](const GeoImage& img, ImageId v) { return img.id < v; });
  if (it == images.end() || it->id != id) {
    throw ValidationError("dataset: unknown image id " + std::to_string(id));
  }
  return static_cast<std::size_t>(it - images.begin());
}

Dataset generate_world(const WorldConfig& cfg) {
  validate(cfg);
  const int dim = cfg.descriptor_dim;

  Dataset ds;
  ds.descriptor_dim = dim;
  ds.config = cfg;

  // places on a grid; the pitch doubles as the split gutter
  const int grid_cols = static_cast<int>(std::ceil(std::sqrt(double(cfg.places))));
  std::vector<PlaceRef> places(cfg.places);
  for (int p = 0; p < cfg.places; ++p) {
    places[p] = {double(p % grid_cols) * cfg.place_spacing_m,
                 double(p / grid_cols) * cfg.place_spacing_m, p};
  }
  const std::vector<Split> place_split = tile_places(places, cfg.split_fractions);

  // latent world content
  Rng proto_rng(derive_seed(cfg.seed, "world/prototypes"));
  std::vector<Eigen::MatrixXd> prototypes(cfg.places);
  for (int p = 0; p < cfg.places; ++p) {
    prototypes[p].resize(cfg.prototypes_per_place, dim);
    for (int l = 0; l < cfg.prototypes_per_place; ++l) {
      prototypes[p].row(l) = unit_vector(proto_rng, dim).transpose();
    }
  }

  Rng cond_rng(derive_seed(cfg.seed, "world/conditions"));
  std::vector<Eigen::VectorXd> condition_dir(cfg.conditions, Eigen::VectorXd::Zero(dim));
  for (int c = 1; c < cfg.conditions; ++c) {
    condition_dir[c] = unit_vector(cond_rng, dim);
  }

  Rng pool_rng(derive_seed(cfg.seed, "world/distractors"));
  Eigen::MatrixXd pool(std::max(cfg.distractor_pool_size, 1), dim);
  if (cfg.distractors_per_image > 0) {
    std::vector<Eigen::VectorXd> modes(cfg.distractor_modes);
    for (int m = 0; m < cfg.distractor_modes; ++m) modes[m] = unit_vector(pool_rng, dim);
    for (int e = 0; e < cfg.distractor_pool_size; ++e) {
      Eigen::VectorXd entry = modes[e % cfg.distractor_modes];
      for (int j = 0; j < dim; ++j) entry(j) += cfg.distractor_mode_sigma * pool_rng.normal();
      pool.row(e) = entry.transpose();
    }
  }

  Rng image_rng(derive_seed(cfg.seed, "world/images"));
  const int rows = cfg.landmarks_per_image + cfg.distractors_per_image;
  ImageId next_id = 0;
  for (int p = 0; p < cfg.places; ++p) {
    const bool suppress_shift =
        cfg.train_single_condition && place_split[p] == Split::Train;
    for (int c = 0; c < cfg.conditions; ++c) {
      for (int j = 0; j < cfg.images_per_place_per_condition; ++j) {
        GeoImage img;
        img.id = next_id++;
        img.place = p;
        img.split = place_split[p];
        img.role = (c == 0) ? Role::Database : Role::Query;
        img.timestamp_days = kConditionSpacingDays * c + j;
        img.x = places[p].x + cfg.gps_jitter_m * image_rng.normal();
        img.y = places[p].y + cfg.gps_jitter_m * image_rng.normal();

        // the draws below do not depend on the ablation flag, so the other
        // splits stay bitwise identical when it flips
        const int shown_condition = suppress_shift ? 0 : c;
        img.condition = shown_condition;

        Eigen::MatrixXd desc(rows, dim);
        const auto subset = image_rng.sample_without_replacement(
            static_cast<std::size_t>(cfg.prototypes_per_place),
            static_cast<std::size_t>(cfg.landmarks_per_image));
        for (int l = 0; l < cfg.landmarks_per_image; ++l) {
          Eigen::VectorXd row = prototypes[p].row(static_cast<Eigen::Index>(subset[l])).transpose();
          for (int q = 0; q < dim; ++q) row(q) += cfg.viewpoint_noise * image_rng.normal();
          row += cfg.condition_shift * condition_dir[shown_condition];
          desc.row(l) = row.transpose();
        }
        for (int r = 0; r < cfg.distractors_per_image; ++r) {
          // verbatim pool entry: the same "car" shows up across places
          const auto pick = image_rng.uniform_index(static_cast<std::size_t>(cfg.distractor_pool_size));
          desc.row(cfg.landmarks_per_image + r) = pool.row(static_cast<Eigen::Index>(pick));
        }

        ds.images.push_back(img);
        ds.descriptors.push_back(desc.cast<float>());
      }
    }
  }
  return ds;
}

std::array<int, 3> split_geographic(Dataset& dataset,
                                    const std::array<double, 3>& fractions) {
  if (dataset.images.empty()) throw ValidationError("split_geographic: empty dataset");

  // place anchor = mean image position
  std::vector<int> count;
  std::vector<double> sx, sy;
  for (const auto& img : dataset.images) {
    const auto p = static_cast<std::size_t>(img.place);
    if (p >= count.size()) {
      count.resize(p + 1, 0);
      sx.resize(p + 1, 0.0);
      sy.resize(p + 1, 0.0);
    }
    ++count[p];
    sx[p] += img.x;
    sy[p] += img.y;
  }
  std::vector<PlaceRef> places;
  for (std::size_t p = 0; p < count.size(); ++p) {
    if (count[p] > 0) {
      places.push_back({sx[p] / count[p], sy[p] / count[p], static_cast<int>(p)});
    }
  }
  const auto by_place = tile_places(places, fractions);

  std::array<int, 3> place_counts{};
  for (const auto& ref : places) {
    ++place_counts[static_cast<int>(by_place[ref.place])];
  }
  for (auto& img : dataset.images) {
    img.split = by_place[img.place];
  }
  return place_counts;
}

std::vector<TrainingTuple> build_tuples(const Dataset& dataset, Split split,
                                        TupleBuildReport* report) {
  const auto members = dataset.indices_of(split);
  if (members.empty()) {
    throw ValidationError(std::string("build_tuples: split '") + to_string(split) +
                          "' has no images");
  }

  std::vector<TrainingTuple> tuples;
  TupleBuildReport local;
  for (const std::size_t qi : members) {
    const GeoImage& q = dataset.images[qi];
    ++local.queries_total;
    TrainingTuple tuple;
    tuple.query_id = q.id;
    for (const std::size_t oi : members) {
      if (oi == qi) continue;
      const GeoImage& o = dataset.images[oi];
      if (std::llabs(o.timestamp_days - q.timestamp_days) < kMinTimeGapDays) continue;
      const double dist = std::hypot(o.x - q.x, o.y - q.y);
      if (dist <= kPositiveRadiusM) {
        tuple.positive_ids.push_back(o.id);
      } else if (dist > kNegativeRadiusM) {
        tuple.negative_ids.push_back(o.id);
      }
      // the 10-25 m ring lands in neither set
    }
    if (tuple.positive_ids.empty()) {
      ++local.dropped_no_positive;
      continue;
    }
    if (tuple.negative_ids.empty()) {
      ++local.dropped_no_negative;
      continue;
    }
    tuples.push_back(std::move(tuple));
  }
  if (report) *report = local;
  return tuples;
}

std::uint64_t dataset_content_hash(const Dataset& dataset) {
  std::uint64_t h = kFnvOffsetBasis;
  auto mix = [&h](const void* p, std::size_t n) { h = fnv1a64(p, n, h); };
  const std::int32_t dim = dataset.descriptor_dim;
  mix(&dim, sizeof(dim));
  for (std::size_t i = 0; i < dataset.images.size(); ++i) {
    const GeoImage& img = dataset.images[i];
    mix(&img.id, sizeof(img.id));
    mix(&img.x, sizeof(img.x));
    mix(&img.y, sizeof(img.y));
    mix(&img.timestamp_days, sizeof(img.timestamp_days));
    mix(&img.condition, sizeof(img.condition));
    mix(&img.place, sizeof(img.place));
    const std::int32_t role = static_cast<std::int32_t>(img.role);
    const std::int32_t split = static_cast<std::int32_t>(img.split);
    mix(&role, sizeof(role));
    mix(&split, sizeof(split));
    const auto& m = dataset.descriptors[i];
    const std::int64_t shape[2] = {m.rows(), m.cols()};
    mix(shape, sizeof(shape));
    mix(m.data(), sizeof(float) * static_cast<std::size_t>(m.size()));
  }
  return h;
}

}  // namespace netvlad
