#pragma once

#include <string>

#include "anyway/maml.hpp"
#include "anyway/proto.hpp"

namespace anyway {

enum class Backend { maml, protonet };

Backend parse_backend(const std::string& name);
std::string to_string(Backend backend);

struct Checkpoint {
  Backend backend = Backend::maml;
  TrainMode mode = TrainMode::anyway;
  std::size_t step = 0;
  MetaModel maml;    // backend == maml
  ProtoModel proto;  // backend == protonet

  const MlpEncoder& encoder() const { return backend == Backend::maml ? maml.encoder : proto.encoder; }
  bool bit_equal(const Checkpoint& other) const;
};

/// One JSON header line (format, version, dims, O, C, buffer list, memory metadata),
/// then every parameter buffer in declaration order as little-endian doubles.
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace anyway
