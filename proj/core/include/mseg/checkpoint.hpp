#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "mseg/network.hpp"

namespace mseg::ckpt {

inline constexpr int kFormatVersion = 1;

// Small string-keyed metadata carried verbatim through save/load
// (epoch, losses, provenance of the producing run, ...).
using Extras = std::map<std::string, std::string>;

// Single-file archive: 8-byte magic, little-endian u64 header length, a JSON
// header (format version, model config, extras, named array index), then the
// raw float64 little-endian payload of all parameters followed by all
// buffers, each in registration order. Written atomically via a temp file.
void save(const std::filesystem::path& path, const net::Model& model,
          const Extras& extras = {});

// Header-only reads; the payload is not touched.
net::ModelConfig peek_config(const std::filesystem::path& path);
Extras peek_extras(const std::filesystem::path& path);

// Rebuilds the model recorded in the header and fills every parameter and
// buffer from the payload.
net::Model load(const std::filesystem::path& path);

// Strict fill of an existing model: stored names, shapes, and order must
// match the model's registry exactly, else ArgumentError naming the mismatch.
void load_into(const std::filesystem::path& path, net::Model& model);

}  // namespace mseg::ckpt
