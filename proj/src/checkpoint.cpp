#include "qadpt/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "json.hpp"
#include "qadpt/error.hpp"
#include "qadpt/io.hpp"

namespace qadpt {

using nlohmann::json;

namespace {

void put_le(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

double get_le(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<double>(bits);
}

[[noreturn]] void fail(const std::string& origin, std::size_t offset, const std::string& msg) {
  throw DataError(origin + ": byte " + std::to_string(offset) + ": " + msg);
}

struct Header {
  Hyperparams hyper;
  Vocabulary vocab;
  std::vector<std::string> relations;
  std::map<std::string, std::string> metadata;
  json tensors;
};

Header parse_header(std::string_view bytes, const std::string& origin, std::size_t& data_start) {
  if (bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic)
    fail(origin, 0, "bad magic (not a checkpoint or unsupported version)");
  const std::size_t start = kCheckpointMagic.size();
  const std::size_t nl = bytes.find('\n', start);
  if (nl == std::string_view::npos) fail(origin, bytes.size(), "truncated header");
  data_start = nl + 1;
  Header h;
  try {
    const json j = json::parse(bytes.substr(start, nl - start));
    if (j.at("version").get<int>() != 1) fail(origin, start, "unsupported checkpoint version");
    for (const auto& [k, v] : j.at("hyper").items())
      if (!set_hyper_field(h.hyper, k, v.get<std::string>()))
        fail(origin, start, "unknown hyperparameter '" + k + "'");
    std::vector<std::pair<std::string, std::size_t>> words;
    for (const auto& w : j.at("vocab").at("words"))
      words.emplace_back(w.at(0).get<std::string>(), w.at(1).get<std::size_t>());
    h.vocab = Vocabulary(std::move(words), j.at("vocab").at("entities").get<std::vector<std::string>>());
    h.relations = j.at("relations").get<std::vector<std::string>>();
    h.metadata = j.value("metadata", std::map<std::string, std::string>{});
    h.tensors = j.at("tensors");
  } catch (const json::exception& e) {
    fail(origin, start, std::string("malformed header: ") + e.what());
  }
  return h;
}

}  // namespace

std::string serialize_checkpoint(const Model& m, const std::map<std::string, std::string>& metadata) {
  Model& mm = const_cast<Model&>(m);  // list() hands out mutable pointers; nothing is written
  std::string data;
  json tensors = json::array();
  for (const auto& [name, t] : mm.parameters()) {
    const std::size_t offset = data.size();
    std::string chunk;
    chunk.reserve(t->size() * 8);
    for (double v : t->values()) put_le(chunk, v);
    tensors.push_back({{"name", name},
                       {"shape", t->shape()},
                       {"offset", offset},
                       {"bytes", chunk.size()},
                       {"fnv1a", fnv1a(chunk)}});
    data += chunk;
  }
  json hyper = json::object();
  for (const auto& [k, v] : hyper_fields(m.hyper())) hyper[k] = v;
  json words = json::array();
  for (const auto& [w, n] : m.vocab().words()) words.push_back({w, n});
  const json header = {
      {"version", 1},
      {"hyper", hyper},
      {"vocab", {{"words", words}, {"entities", m.vocab().entity_names()}}},
      {"relations", m.catalog().relation_names()},
      {"metadata", metadata},
      {"tensors", tensors},
      {"data_bytes", data.size()},
  };
  std::string out(kCheckpointMagic);
  out += header.dump();
  out += '\n';
  out += data;
  return out;
}

Model deserialize_checkpoint(std::string_view bytes, const std::string& origin) {
  std::size_t data_start = 0;
  Header h = parse_header(bytes, origin, data_start);
  Model m(h.hyper, h.vocab, h.relations);
  auto params = m.parameters();
  if (h.tensors.size() != params.size())
    fail(origin, data_start, "tensor count " + std::to_string(h.tensors.size()) + " does not match model (" +
                                 std::to_string(params.size()) + ")");
  std::size_t expected_offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, t] = params[i];
    const json& e = h.tensors[i];
    std::size_t offset = 0, nbytes = 0;
    std::uint64_t sum = 0;
    try {
      if (e.at("name").get<std::string>() != name)
        fail(origin, data_start + expected_offset, "expected tensor '" + name + "'");
      if (e.at("shape").get<std::vector<std::size_t>>() != t->shape())
        fail(origin, data_start + expected_offset, "tensor '" + name + "' has shape " +
                                                       shape_string(e.at("shape").get<std::vector<std::size_t>>()) +
                                                       ", model expects " + shape_string(t->shape()));
      offset = e.at("offset").get<std::size_t>();
      nbytes = e.at("bytes").get<std::size_t>();
      sum = e.at("fnv1a").get<std::uint64_t>();
    } catch (const json::exception& ex) {
      fail(origin, data_start, std::string("malformed tensor manifest: ") + ex.what());
    }
    if (offset != expected_offset || nbytes != t->size() * 8)
      fail(origin, data_start + expected_offset, "manifest layout mismatch for '" + name + "'");
    const std::size_t abs = data_start + offset;
    if (abs + nbytes > bytes.size())
      fail(origin, bytes.size(), "truncated: tensor '" + name + "' needs bytes up to " + std::to_string(abs + nbytes));
    const std::string_view chunk = bytes.substr(abs, nbytes);
    if (fnv1a(chunk) != sum) fail(origin, abs, "checksum mismatch in tensor '" + name + "'");
    for (std::size_t j = 0; j < t->size(); ++j) (*t)[j] = get_le(chunk.data() + 8 * j);
    expected_offset += nbytes;
  }
  if (data_start + expected_offset != bytes.size())
    fail(origin, data_start + expected_offset, "trailing bytes after tensor data");
  return m;
}

void save_checkpoint(const Model& m, const std::string& path,
                     const std::map<std::string, std::string>& metadata) {
  write_file_atomic(path, serialize_checkpoint(m, metadata));
}

Model load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file(path), path); }

std::map<std::string, std::string> checkpoint_metadata(const std::string& path) {
  const std::string bytes = read_file(path);
  std::size_t data_start = 0;
  return parse_header(bytes, path, data_start).metadata;
}

}  // namespace qadpt
