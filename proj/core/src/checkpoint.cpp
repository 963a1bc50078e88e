#include "mseg/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "mseg/errors.hpp"

namespace mseg::ckpt {
namespace {

using ordered_json = nlohmann::ordered_json;

constexpr char kMagic[8] = {'M', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little,
              "payload is raw little-endian float64");

ordered_json config_to_json(const net::ModelConfig& cfg) {
  ordered_json j;
  j["variant"] = net::to_string(cfg.variant);
  j["T"] = cfg.T;
  j["num_classes"] = cfg.num_classes;
  j["groups"] = cfg.groups;
  j["stem"] = cfg.stem;
  j["stages"] = cfg.stages;
  j["depths"] = cfg.depths;
  j["fuse"] = cfg.fuse;
  j["cell_kernel"] = cfg.cell_kernel;
  j["residual_cells"] = cfg.residual_cells;
  j["flow_cap"] = cfg.flow_cap;
  return j;
}

net::ModelConfig config_from_json(const ordered_json& j, const std::string& where) {
  net::ModelConfig cfg;
  try {
    cfg.variant = net::variant_from_string(j.at("variant").get<std::string>());
    cfg.T = j.at("T").get<int>();
    cfg.num_classes = j.at("num_classes").get<int>();
    cfg.groups = j.at("groups").get<int>();
    cfg.stem = j.at("stem").get<int>();
    cfg.stages = j.at("stages").get<std::array<int, 3>>();
    cfg.depths = j.at("depths").get<std::array<int, 3>>();
    cfg.fuse = j.at("fuse").get<std::array<int, 3>>();
    cfg.cell_kernel = j.at("cell_kernel").get<int>();
    cfg.residual_cells = j.at("residual_cells").get<bool>();
    cfg.flow_cap = j.at("flow_cap").get<double>();
  } catch (const ordered_json::exception& e) {
    throw FormatError(where + ": bad config record: " + e.what());
  } catch (const ArgumentError& e) {
    throw FormatError(where + ": bad config record: " + e.what());
  }
  return cfg;
}

struct Header {
  ordered_json json;
  std::uint64_t payload_offset = 0;
};

Header read_header(const std::filesystem::path& path, std::ifstream& in) {
  const std::string where = path.string();
  char magic[8];
  std::uint64_t header_len = 0;
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw FormatError(where + ": not a checkpoint (bad magic)");
  unsigned char lenb[8];
  if (!in.read(reinterpret_cast<char*>(lenb), 8))
    throw FormatError(where + ": truncated header length");
  for (int i = 7; i >= 0; --i) header_len = (header_len << 8) | lenb[i];
  std::string text(header_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(header_len)))
    throw FormatError(where + ": truncated header");

  Header h;
  h.json = ordered_json::parse(text, nullptr, false);
  if (h.json.is_discarded()) throw FormatError(where + ": header is not valid JSON");
  h.payload_offset = 16 + header_len;

  const auto version = h.json.value("format_version", -1);
  if (version != kFormatVersion)
    throw FormatError(where + ": unsupported format version " + std::to_string(version));
  return h;
}

std::ifstream open_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw NotFoundError("checkpoint not found: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

struct ArrayRecord {
  std::string name;
  std::vector<int> shape;
};

std::vector<ArrayRecord> parse_index(const ordered_json& list, const std::string& where,
                                     const char* what) {
  std::vector<ArrayRecord> out;
  try {
    for (const auto& e : list) {
      ArrayRecord r;
      r.name = e.at("name").get<std::string>();
      r.shape = e.at("shape").get<std::vector<int>>();
      out.push_back(std::move(r));
    }
  } catch (const ordered_json::exception& e) {
    throw FormatError(where + ": bad " + what + " index: " + e.what());
  }
  return out;
}

void read_payload_into(std::ifstream& in, const std::filesystem::path& path,
                       const std::vector<ArrayRecord>& params,
                       const std::vector<ArrayRecord>& buffers, net::Model& model) {
  const std::string where = path.string();
  auto& live_params = model.store.params();
  auto& live_buffers = model.store.buffers();
  if (params.size() != live_params.size() || buffers.size() != live_buffers.size())
    throw ArgumentError(where + ": checkpoint has " + std::to_string(params.size()) + "/" +
                        std::to_string(buffers.size()) + " params/buffers, model expects " +
                        std::to_string(live_params.size()) + "/" +
                        std::to_string(live_buffers.size()));

  auto read_array = [&](const ArrayRecord& rec, const std::string& live_name, Tensor& dst) {
    if (rec.name != live_name)
      throw ArgumentError(where + ": stored array '" + rec.name +
                          "' does not match model entry '" + live_name + "'");
    if (rec.shape != dst.shape())
      throw ArgumentError(where + ": shape mismatch for '" + rec.name + "'");
    const auto bytes = static_cast<std::streamsize>(dst.size() * sizeof(double));
    if (!in.read(reinterpret_cast<char*>(dst.data()), bytes))
      throw FormatError(where + ": truncated payload at '" + rec.name + "'");
  };

  for (std::size_t i = 0; i < params.size(); ++i)
    read_array(params[i], live_params[i].name, live_params[i].var->value);
  for (std::size_t i = 0; i < buffers.size(); ++i)
    read_array(buffers[i], live_buffers[i].name, live_buffers[i].value);

  char extra;
  if (in.read(&extra, 1)) throw FormatError(where + ": trailing bytes after payload");
}

}  // namespace

void save(const std::filesystem::path& path, const net::Model& model, const Extras& extras) {
  ordered_json header;
  header["format_version"] = kFormatVersion;
  header["config"] = config_to_json(model.cfg);
  header["extras"] = extras;
  header["params"] = ordered_json::array();
  for (const auto& p : model.store.params()) {
    ordered_json e;
    e["name"] = p.name;
    e["shape"] = p.var->value.shape();
    e["decay"] = p.decay;
    header["params"].push_back(std::move(e));
  }
  header["buffers"] = ordered_json::array();
  for (const auto& b : model.store.buffers()) {
    ordered_json e;
    e["name"] = b.name;
    e["shape"] = b.value.shape();
    header["buffers"].push_back(std::move(e));
  }
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(kMagic, 8);
    const std::uint64_t len = text.size();
    unsigned char lenb[8];
    for (int i = 0; i < 8; ++i) lenb[i] = static_cast<unsigned char>((len >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(lenb), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& p : model.store.params()) {
      const Tensor& t = p.var->value;
      out.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    for (const auto& b : model.store.buffers())
      out.write(reinterpret_cast<const char*>(b.value.data()),
                static_cast<std::streamsize>(b.value.size() * sizeof(double)));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
}

net::ModelConfig peek_config(const std::filesystem::path& path) {
  auto in = open_checkpoint(path);
  const Header h = read_header(path, in);
  if (!h.json.contains("config")) throw FormatError(path.string() + ": missing config record");
  return config_from_json(h.json["config"], path.string());
}

Extras peek_extras(const std::filesystem::path& path) {
  auto in = open_checkpoint(path);
  const Header h = read_header(path, in);
  Extras out;
  if (h.json.contains("extras")) {
    try {
      out = h.json["extras"].get<Extras>();
    } catch (const ordered_json::exception& e) {
      throw FormatError(path.string() + ": bad extras record: " + e.what());
    }
  }
  return out;
}

net::Model load(const std::filesystem::path& path) {
  auto in = open_checkpoint(path);
  const Header h = read_header(path, in);
  if (!h.json.contains("config")) throw FormatError(path.string() + ": missing config record");
  net::Model model(config_from_json(h.json["config"], path.string()));
  const auto params = parse_index(h.json.value("params", ordered_json::array()), path.string(),
                                  "param");
  const auto buffers = parse_index(h.json.value("buffers", ordered_json::array()), path.string(),
                                   "buffer");
  read_payload_into(in, path, params, buffers, model);
  return model;
}

void load_into(const std::filesystem::path& path, net::Model& model) {
  auto in = open_checkpoint(path);
  const Header h = read_header(path, in);
  const auto params = parse_index(h.json.value("params", ordered_json::array()), path.string(),
                                  "param");
  const auto buffers = parse_index(h.json.value("buffers", ordered_json::array()), path.string(),
                                   "buffer");
  read_payload_into(in, path, params, buffers, model);
}

}  // namespace mseg::ckpt
