#pragma once

// Self-describing binary checkpoints: magic string, format version, then a
// frozen and a trainable section, each holding per-tensor records (name,
// rank, dims as u64 LE, payload as f64 LE). Also provides the SHA-256
// content hash used for the frozen-parameter contract.

#include <string>
#include <vector>

#include "mfuser/blocks.hpp"

namespace mf {

void save_checkpoint(const std::string& path, const ParamStore& ps);
// Loads values into an already-constructed store with identical entry names
// and shapes; any mismatch is an error.
void load_checkpoint(const std::string& path, ParamStore& ps);

// Hex SHA-256 of the serialized frozen (or trainable) section contents.
std::string frozen_hash(const ParamStore& ps);
std::string trainable_hash(const ParamStore& ps);

std::string sha256_hex(const std::vector<unsigned char>& bytes);

}  // namespace mf
