#include "got/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "json.hpp"

namespace got {

namespace {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Minimal ustar reader/writer: regular files only, names < 100 bytes.

constexpr std::size_t kBlock = 512;

void put_octal(char* field, std::size_t width, std::uint64_t value) {
  std::string s(width - 1, '0');
  for (std::size_t i = width - 1; i-- > 0 && value;) {
    s[i] = static_cast<char>('0' + (value & 7));
    value >>= 3;
  }
  std::memcpy(field, s.data(), width - 1);
  field[width - 1] = '\0';
}

std::uint64_t get_octal(const char* field, std::size_t width) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < width && field[i]; ++i) {
    if (field[i] == ' ') continue;
    if (field[i] < '0' || field[i] > '7') throw CorruptionError("checkpoint: bad octal field in archive header");
    v = (v << 3) | static_cast<std::uint64_t>(field[i] - '0');
  }
  return v;
}

unsigned header_checksum(const char* h) {
  unsigned sum = 0;
  for (std::size_t i = 0; i < kBlock; ++i) {
    sum += (i >= 148 && i < 156) ? static_cast<unsigned>(' ') : static_cast<unsigned char>(h[i]);
  }
  return sum;
}

void tar_add(std::string& out, const std::string& name, const std::string& data) {
  if (name.size() >= 100) throw CheckpointError("checkpoint: entry name too long: " + name);
  char h[kBlock] = {};
  std::memcpy(h, name.data(), name.size());
  put_octal(h + 100, 8, 0644);
  put_octal(h + 108, 8, 0);
  put_octal(h + 116, 8, 0);
  put_octal(h + 124, 12, data.size());
  put_octal(h + 136, 12, 0);  // fixed mtime keeps archives byte-identical
  h[156] = '0';
  std::memcpy(h + 257, "ustar", 6);
  std::memcpy(h + 263, "00", 2);
  const unsigned sum = header_checksum(h);
  put_octal(h + 148, 7, sum);
  h[155] = ' ';
  out.append(h, kBlock);
  out.append(data);
  out.append((kBlock - data.size() % kBlock) % kBlock, '\0');
}

std::map<std::string, std::string> tar_read(const std::string& bytes) {
  std::map<std::string, std::string> files;
  std::size_t pos = 0;
  bool ended = false;
  while (pos + kBlock <= bytes.size()) {
    const char* h = bytes.data() + pos;
    if (std::all_of(h, h + kBlock, [](char c) { return c == 0; })) {
      ended = true;
      break;
    }
    if (std::memcmp(h + 257, "ustar", 5) != 0) throw CorruptionError("checkpoint: not a ustar archive");
    if (get_octal(h + 148, 8) != header_checksum(h)) throw CorruptionError("checkpoint: archive header checksum mismatch");
    const std::string name(h, strnlen(h, 100));
    const std::uint64_t size = get_octal(h + 124, 12);
    pos += kBlock;
    if (size > bytes.size() - pos) throw CorruptionError("checkpoint: truncated archive (entry " + name + ")");
    files[name] = bytes.substr(pos, size);
    pos += (size + kBlock - 1) / kBlock * kBlock;
  }
  if (!ended) throw CorruptionError("checkpoint: truncated archive (no end-of-archive marker)");
  return files;
}

// ---------------------------------------------------------------------------

std::string tensor_bytes(const Tensor<float>& t) {
  std::string out(t.size() * 4, '\0');
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint32_t u = std::bit_cast<std::uint32_t>(t[i]);
    if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
    std::memcpy(out.data() + 4 * i, &u, 4);
  }
  return out;
}

Tensor<float> tensor_from_bytes(const std::string& bytes, const Shape& shape, const std::string& name) {
  Tensor<float> t(shape);
  if (bytes.size() != t.size() * 4) {
    throw CorruptionError("checkpoint: tensor " + name + " holds " + std::to_string(bytes.size()) + " bytes, expected " +
                          std::to_string(t.size() * 4));
  }
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint32_t u;
    std::memcpy(&u, bytes.data() + 4 * i, 4);
    if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
    t[i] = std::bit_cast<float>(u);
  }
  return t;
}

json entries_json(const std::vector<TensorEntry>& entries) {
  json a = json::array();
  for (const auto& e : entries) a.push_back({{"name", e.name}, {"shape", e.shape}, {"file", e.file}});
  return a;
}

std::vector<TensorEntry> entries_from(const json& a) {
  std::vector<TensorEntry> out;
  for (const auto& e : a) out.push_back({e.at("name").get<std::string>(), e.at("shape").get<Shape>(), e.at("file").get<std::string>()});
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

Manifest parse_manifest(const std::map<std::string, std::string>& files) {
  auto it = files.find("manifest.json");
  if (it == files.end()) throw CorruptionError("checkpoint: manifest.json missing");
  json j;
  try {
    j = json::parse(it->second);
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("checkpoint: manifest is not valid JSON: ") + e.what());
  }
  Manifest m;
  try {
    m.format_version = j.at("format_version").get<int>();
  } catch (const json::exception&) {
    throw CorruptionError("checkpoint: manifest has no format_version");
  }
  if (m.format_version != kCheckpointFormatVersion) {
    throw UnsupportedVersionError("checkpoint format version " + std::to_string(m.format_version) +
                                  " is not supported (this build reads version " +
                                  std::to_string(kCheckpointFormatVersion) + ")");
  }
  try {
    m.task = parse_task(j.at("task").get<std::string>());
    m.mode = parse_caption_mode(j.at("mode").get<std::string>());
    m.config = j.at("config").get<std::map<std::string, std::string>>();
    m.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
    m.superclasses = j.at("superclasses").get<std::vector<std::string>>();
    m.iteration = j.at("iteration").get<long>();
    m.loss_tail = j.at("loss_tail").get<std::vector<double>>();
    m.tensors = entries_from(j.at("tensors"));
    m.velocity = entries_from(j.value("velocity", json::array()));
    m.digest = j.at("digest").get<std::string>();
    m.pretrained_backbone = j.value("pretrained_backbone", std::string());
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("checkpoint: malformed manifest: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CorruptionError(std::string("checkpoint: malformed manifest: ") + e.what());
  }
  return m;
}

Checkpoint load_impl(const std::filesystem::path& path) {
  const auto files = tar_read(read_file(path));
  Checkpoint ck;
  ck.manifest = parse_manifest(files);
  const Manifest& m = ck.manifest;

  std::set<std::string> expected{"manifest.json"};
  auto load_into = [&](ParamStore<float>& store, const std::vector<TensorEntry>& entries) {
    for (const auto& e : entries) {
      auto f = files.find(e.file);
      if (f == files.end()) throw CorruptionError("checkpoint: tensor blob " + e.file + " missing");
      store.add(e.name, e.shape).value = tensor_from_bytes(f->second, e.shape, e.name);
      expected.insert(e.file);
    }
  };
  load_into(ck.model.params, m.tensors);
  if (digest_hex(ck.model.params.digest()) != m.digest) {
    throw CorruptionError("checkpoint: content digest mismatch (manifest " + m.digest + ", data " +
                          digest_hex(ck.model.params.digest()) + ")");
  }
  if (!m.velocity.empty()) {
    MomentumState s;
    load_into(s.velocity, m.velocity);
    ck.momentum = std::move(s);
  }
  for (const auto& [name, data] : files) {
    if (!expected.count(name)) throw CorruptionError("checkpoint: unexpected archive entry " + name);
  }
  try {
    ck.model.config = Config::from_map(m.config);
    ck.model.vocab = Vocabulary(m.vocabulary);
  } catch (const std::invalid_argument& e) {
    throw CorruptionError(std::string("checkpoint: ") + e.what());
  }
  ck.model.superclasses = m.superclasses;
  return ck;
}

}  // namespace

std::string digest_hex(std::uint64_t digest) {
  static const char* hex = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = hex[digest & 15];
    digest >>= 4;
  }
  return s;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, long iteration,
                     const std::vector<double>& loss_tail, const MomentumState* momentum) {
  std::vector<TensorEntry> tensors, velocity;
  std::string blobs;
  for (const auto& [name, p] : model.params.all()) {
    tensors.push_back({name, p.value.shape(), "tensors/" + name + ".f32"});
    tar_add(blobs, tensors.back().file, tensor_bytes(p.value));
  }
  if (momentum) {
    for (const auto& [name, p] : momentum->velocity.all()) {
      velocity.push_back({name, p.value.shape(), "velocity/" + name + ".f32"});
      tar_add(blobs, velocity.back().file, tensor_bytes(p.value));
    }
  }
  json j;
  j["format_version"] = kCheckpointFormatVersion;
  j["task"] = to_string(model.config.task);
  j["mode"] = to_string(model.config.mode);
  j["config"] = model.config.to_map();
  j["vocabulary"] = model.vocab.words();
  j["superclasses"] = model.superclasses;
  j["iteration"] = iteration;
  j["loss_tail"] = loss_tail;
  j["tensors"] = entries_json(tensors);
  j["velocity"] = entries_json(velocity);
  j["digest"] = digest_hex(model.params.digest());
  j["pretrained_backbone"] = "";

  std::string archive;
  tar_add(archive, "manifest.json", j.dump(2));
  archive += blobs;
  archive.append(2 * kBlock, '\0');

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + tmp);
    out.write(archive.data(), static_cast<std::streamsize>(archive.size()));
    if (!out) throw CheckpointError("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<Task> expected_task) {
  auto ck = load_impl(path);
  if (expected_task && *expected_task != ck.manifest.task) {
    throw TaskMismatchError("checkpoint " + path.string() + " was trained for the " + to_string(ck.manifest.task) +
                            " task, not " + to_string(*expected_task));
  }
  return ck;
}

Manifest read_manifest(const std::filesystem::path& path) { return load_impl(path).manifest; }

}  // namespace got
