#pragma once

#include <string>
#include <utility>

#include "netvlad/common.hpp"
#include "netvlad/descriptors.hpp"
#include "netvlad/pooling.hpp"

namespace netvlad {

enum class Pooling : int { NetVlad = 0, VladHard = 1, Max = 2, Sum = 3 };

inline const char* to_string(Pooling p) {
  switch (p) {
    case Pooling::NetVlad: return "netvlad";
    case Pooling::VladHard: return "vlad";
    case Pooling::Max: return "max";
    case Pooling::Sum: return "sum";
  }
  return "?";
}

inline Pooling pooling_from_string(const std::string& s) {
  if (s == "netvlad") return Pooling::NetVlad;
  if (s == "vlad") return Pooling::VladHard;
  if (s == "max") return Pooling::Max;
  if (s == "sum") return Pooling::Sum;
  throw ValidationError("unknown pooling method '" + s + "'");
}

// raw activations work best for Max/Sum, descriptor-wise L2 for VLAD-family
inline bool default_descriptor_normalization(Pooling p) {
  return p == Pooling::NetVlad || p == Pooling::VladHard;
}

// Pooling method + its parameters + the descriptor preprocessing switch.
// Max/Sum have no trainable parameters; params stays empty for them.
template <class S>
struct Encoder {
  Pooling pooling = Pooling::NetVlad;
  bool normalize_input = true;
  NetVladParams<S> params;

  DescriptorMap<S> preprocess(ImageId id, const MatrixX<float>& raw) const {
    DescriptorMap<S> m;
    m.image_id = id;
    m.descriptors = raw.template cast<S>();
    if (normalize_input) return l2_normalize_descriptors(std::move(m));
    validate(m);
    return m;
  }

  VectorX<S> encode_map(const DescriptorMap<S>& m) const {
    switch (pooling) {
      case Pooling::NetVlad: return netvlad_forward(m, params).first;
      case Pooling::VladHard: return vlad_hard(m, params.c);
      case Pooling::Max: return max_pool(m);
      case Pooling::Sum: return sum_pool(m);
    }
    throw RuntimeError("encoder: invalid pooling");
  }

  VectorX<S> encode(ImageId id, const MatrixX<float>& raw) const {
    return encode_map(preprocess(id, raw));
  }

  Eigen::Index output_dim(Eigen::Index input_d) const {
    return (pooling == Pooling::Max || pooling == Pooling::Sum)
               ? input_d
               : params.k() * params.d();
  }
};

template <class S>
Encoder<S> make_encoder(Pooling pooling, NetVladParams<S> params = {}) {
  Encoder<S> enc;
  enc.pooling = pooling;
  enc.normalize_input = default_descriptor_normalization(pooling);
  enc.params = std::move(params);
  return enc;
}

}  // namespace netvlad
