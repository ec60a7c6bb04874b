#pragma once

#include <json.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "netvlad/common.hpp"
#include "netvlad/pooling.hpp"
#include "netvlad/postprocess.hpp"

namespace netvlad {

// Versioned binary containers with little-endian raw arrays, plus a JSON
// sidecar at "<path>.json" carrying run provenance.

struct CheckpointMeta {
  double alpha = 1.0;
  std::uint64_t seed = 0;
  std::string init_sample_hash;
  std::string pooling = "netvlad";
  bool normalize_descriptors = true;
};

namespace detail {

inline void io_write(std::ofstream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void io_read(std::ifstream& in, void* p, std::size_t n, const char* what) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (in.gcount() != static_cast<std::streamsize>(n)) {
    throw ValidationError(std::string("checkpoint: truncated while reading ") + what);
  }
}

template <class S>
void write_array(std::ofstream& out, const S* data, std::size_t count) {
  io_write(out, data, sizeof(S) * count);
}

// stored precision -> run precision
template <class S>
void read_array(std::ifstream& in, S* data, std::size_t count, int stored_size,
                const char* what) {
  if (stored_size == static_cast<int>(sizeof(S))) {
    io_read(in, data, sizeof(S) * count, what);
    return;
  }
  if (stored_size == 4) {
    std::vector<float> tmp(count);
    io_read(in, tmp.data(), 4 * count, what);
    for (std::size_t i = 0; i < count; ++i) data[i] = static_cast<S>(tmp[i]);
  } else if (stored_size == 8) {
    std::vector<double> tmp(count);
    io_read(in, tmp.data(), 8 * count, what);
    for (std::size_t i = 0; i < count; ++i) data[i] = static_cast<S>(tmp[i]);
  } else {
    throw ValidationError("checkpoint: unsupported scalar size " + std::to_string(stored_size));
  }
}

inline void write_sidecar(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
  std::ofstream out(path.string() + ".json", std::ios::trunc);
  if (!out) throw RuntimeError("cannot write sidecar for '" + path.string() + "'");
  out << j.dump(2) << "\n";
}

inline nlohmann::ordered_json read_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path.string() + ".json");
  if (!in) throw ValidationError("missing sidecar '" + path.string() + ".json'");
  nlohmann::ordered_json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("sidecar for '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return j;
}

}  // namespace detail

inline constexpr char kParamsMagic[4] = {'N', 'V', 'C', 'K'};
inline constexpr char kWhiteningMagic[4] = {'N', 'V', 'W', 'T'};

template <class S>
void save_params(const std::filesystem::path& path, const NetVladParams<S>& params,
                 const CheckpointMeta& meta) {
  validate(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeError("cannot write checkpoint '" + path.string() + "'");

  detail::io_write(out, kParamsMagic, 4);
  const std::uint32_t version = 1;
  const std::uint32_t k = static_cast<std::uint32_t>(params.k());
  const std::uint32_t d = static_cast<std::uint32_t>(params.d());
  const std::uint8_t scalar = sizeof(S);
  detail::io_write(out, &version, 4);
  detail::io_write(out, &k, 4);
  detail::io_write(out, &d, 4);
  detail::io_write(out, &scalar, 1);
  detail::write_array(out, params.w.data(), static_cast<std::size_t>(params.w.size()));
  detail::write_array(out, params.b.data(), static_cast<std::size_t>(params.b.size()));
  detail::write_array(out, params.c.data(), static_cast<std::size_t>(params.c.size()));
  if (!out) throw RuntimeError("short write to '" + path.string() + "'");
  out.close();

  nlohmann::ordered_json side;
  side["alpha"] = meta.alpha;
  side["seed"] = meta.seed;
  side["init_sample_hash"] = meta.init_sample_hash;
  side["pooling"] = meta.pooling;
  side["normalize_descriptors"] = meta.normalize_descriptors;
  detail::write_sidecar(path, side);
}

template <class S>
NetVladParams<S> load_params(const std::filesystem::path& path, CheckpointMeta* meta = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint '" + path.string() + "'");

  char magic[4];
  detail::io_read(in, magic, 4, "magic");
  if (std::memcmp(magic, kParamsMagic, 4) != 0) {
    throw ValidationError("'" + path.string() + "' is not a parameter checkpoint");
  }
  std::uint32_t version = 0, k = 0, d = 0;
  std::uint8_t scalar = 0;
  detail::io_read(in, &version, 4, "version");
  if (version != 1) throw ValidationError("unsupported checkpoint version");
  detail::io_read(in, &k, 4, "K");
  detail::io_read(in, &d, 4, "D");
  detail::io_read(in, &scalar, 1, "precision");
  if (k < 1 || d < 1) throw ValidationError("checkpoint header has K or D < 1");

  NetVladParams<S> params;
  params.w.resize(k, d);
  params.b.resize(k);
  params.c.resize(k, d);
  detail::read_array(in, params.w.data(), static_cast<std::size_t>(params.w.size()), scalar, "w");
  detail::read_array(in, params.b.data(), static_cast<std::size_t>(params.b.size()), scalar, "b");
  detail::read_array(in, params.c.data(), static_cast<std::size_t>(params.c.size()), scalar, "c");

  const auto side = detail::read_sidecar(path);
  CheckpointMeta m;
  m.alpha = side.value("alpha", 1.0);
  m.seed = side.value("seed", std::uint64_t{0});
  m.init_sample_hash = side.value("init_sample_hash", std::string{});
  m.pooling = side.value("pooling", std::string{"netvlad"});
  m.normalize_descriptors = side.value("normalize_descriptors", true);
  params.alpha = static_cast<S>(m.alpha);
  if (meta) *meta = m;

  validate(params);
  return params;
}

template <class S>
void save_whitening(const std::filesystem::path& path, const WhiteningTransform<S>& t,
                    const std::string& source_hash) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeError("cannot write whitening transform '" + path.string() + "'");
  detail::io_write(out, kWhiteningMagic, 4);
  const std::uint32_t version = 1;
  const std::uint32_t in_dim = static_cast<std::uint32_t>(t.in_dim());
  const std::uint32_t out_dim = static_cast<std::uint32_t>(t.out_dim());
  const std::uint8_t scalar = sizeof(S);
  detail::io_write(out, &version, 4);
  detail::io_write(out, &in_dim, 4);
  detail::io_write(out, &out_dim, 4);
  detail::io_write(out, &scalar, 1);
  detail::write_array(out, t.mean.data(), static_cast<std::size_t>(t.mean.size()));
  detail::write_array(out, t.rows.data(), static_cast<std::size_t>(t.rows.size()));
  detail::write_array(out, t.eigenvalues.data(), static_cast<std::size_t>(t.eigenvalues.size()));
  if (!out) throw RuntimeError("short write to '" + path.string() + "'");
  out.close();

  nlohmann::ordered_json side;
  side["epsilon"] = kWhiteningEpsilon;
  side["source_hash"] = source_hash;
  detail::write_sidecar(path, side);
}

template <class S>
WhiteningTransform<S> load_whitening(const std::filesystem::path& path,
                                     std::string* source_hash = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open whitening transform '" + path.string() + "'");
  char magic[4];
  detail::io_read(in, magic, 4, "magic");
  if (std::memcmp(magic, kWhiteningMagic, 4) != 0) {
    throw ValidationError("'" + path.string() + "' is not a whitening transform");
  }
  std::uint32_t version = 0, in_dim = 0, out_dim = 0;
  std::uint8_t scalar = 0;
  detail::io_read(in, &version, 4, "version");
  if (version != 1) throw ValidationError("unsupported whitening version");
  detail::io_read(in, &in_dim, 4, "in_dim");
  detail::io_read(in, &out_dim, 4, "out_dim");
  detail::io_read(in, &scalar, 1, "precision");

  WhiteningTransform<S> t;
  t.mean.resize(in_dim);
  t.rows.resize(out_dim, in_dim);
  t.eigenvalues.resize(out_dim);
  detail::read_array(in, t.mean.data(), static_cast<std::size_t>(t.mean.size()), scalar, "mean");
  detail::read_array(in, t.rows.data(), static_cast<std::size_t>(t.rows.size()), scalar, "rows");
  detail::read_array(in, t.eigenvalues.data(), static_cast<std::size_t>(t.eigenvalues.size()),
                     scalar, "eigenvalues");

  if (source_hash) {
    const auto side = detail::read_sidecar(path);
    *source_hash = side.value("source_hash", std::string{});
  }
  return t;
}

}  // namespace netvlad
