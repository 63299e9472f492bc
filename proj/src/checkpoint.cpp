#include "brainenc/checkpoint.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "brainenc/nenc.hpp"

namespace brainenc::model {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'N', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint64_t kMaxHeader = 64u << 20;

void put_u32(std::ostream& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u64(std::ostream& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}
template <typename U>
U get_le(std::istream& in, const std::string& what) {
  unsigned char b[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(b), sizeof(U))) throw CorruptContainerError(what + ": truncated header");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
  return v;
}

}  // namespace

std::pair<std::size_t, std::size_t> Checkpoint::vertices_of(std::size_t subject) const {
  for (std::size_t i = 0; i < subjects.size(); ++i)
    if (subjects[i] == subject) return vertices.at(i);
  throw ValidationError("checkpoint does not cover subject " + std::to_string(subject));
}

bool Checkpoint::covers(std::size_t subject) const {
  return std::find(subjects.begin(), subjects.end(), subject) != subjects.end();
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  if (ckpt.subjects.size() != ckpt.vertices.size()) throw ArgumentError("checkpoint subjects and vertex counts differ in length");
  json arrays = json::array();
  for (const auto& [name, t] : ckpt.state) arrays.push_back({{"name", name}, {"shape", t.shape()}});
  json verts = json::array();
  for (const auto& [l, r] : ckpt.vertices) verts.push_back({l, r});
  const json header = {{"encoder", to_json(ckpt.encoder)},
                       {"stage", ckpt.stage},
                       {"epoch", ckpt.epoch},
                       {"val_m", ckpt.val_m},
                       {"subjects", ckpt.subjects},
                       {"vertices", verts},
                       {"rois", data::rois_to_json(ckpt.rois)},
                       {"folds", {{"n_folds", ckpt.folds.n_folds}, {"fold", ckpt.folds.fold}, {"seed", ckpt.folds.seed}}},
                       {"train", ckpt.train},
                       {"arrays", arrays}};
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  put_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : ckpt.state)
    if (t.size() > 0) data::write_array(out, t);
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string what = path.string();
  if (!std::filesystem::exists(path)) throw MissingFileError("checkpoint not found: " + what);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + what);
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kMagic)) throw CorruptContainerError(what + ": not a checkpoint file");
  const auto version = get_le<std::uint32_t>(in, what);
  if (version != kVersion) throw CorruptContainerError(what + ": unsupported checkpoint version " + std::to_string(version));
  const auto length = get_le<std::uint64_t>(in, what);
  if (length > kMaxHeader) throw CorruptContainerError(what + ": header length " + std::to_string(length) + " is implausible");
  std::string text(length, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(length))) throw CorruptContainerError(what + ": truncated header");

  Checkpoint ckpt;
  try {
    const json h = json::parse(text);
    ckpt.encoder = encoder_config_from_json(h.at("encoder"));
    ckpt.stage = h.at("stage").get<std::string>();
    ckpt.epoch = h.at("epoch").get<std::size_t>();
    ckpt.val_m = h.at("val_m").get<double>();
    ckpt.subjects = h.at("subjects").get<std::vector<std::size_t>>();
    for (const auto& v : h.at("vertices")) ckpt.vertices.emplace_back(v.at(0).get<std::size_t>(), v.at(1).get<std::size_t>());
    ckpt.rois = data::rois_from_json(h.at("rois"));
    const auto& f = h.at("folds");
    ckpt.folds = {f.at("n_folds").get<std::size_t>(), f.at("fold").get<std::size_t>(), f.at("seed").get<std::uint64_t>()};
    ckpt.train = h.at("train");
    for (const auto& a : h.at("arrays")) {
      const auto name = a.at("name").get<std::string>();
      const auto shape = a.at("shape").get<nd::Shape>();
      nd::Tensor<float> t(shape);
      if (t.size() > 0) {
        t = data::read_array(in, what + " array '" + name + "'");
        if (t.shape() != shape)
          throw CorruptContainerError(what + ": array '" + name + "' has shape " + nd::shape_str(t.shape()) + ", header says " +
                                      nd::shape_str(shape));
      }
      ckpt.state.emplace(name, std::move(t));
    }
  } catch (const json::exception& e) {
    throw CorruptContainerError(what + ": malformed header: " + e.what());
  }
  if (ckpt.subjects.size() != ckpt.vertices.size()) throw CorruptContainerError(what + ": subject and vertex lists differ");
  if (in.peek() != std::char_traits<char>::eof()) throw CorruptContainerError(what + ": trailing bytes after last array");
  return ckpt;
}

Encoder<float> build_encoder(const Checkpoint& ckpt) {
  Encoder<float> enc(ckpt.encoder, 0);
  if (!ckpt.rois.empty()) enc.add_roi_heads(ckpt.rois);
  enc.load_state(ckpt.state);
  return enc;
}

}  // namespace brainenc::model
