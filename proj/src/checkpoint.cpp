#include "milkit/checkpoint.hpp"

#include <cstring>

#include "milkit/io_util.hpp"

namespace milkit {

using nlohmann::json;

namespace container {

namespace {
constexpr char kMagic[] = "MILKIT1";
constexpr std::size_t kMagicLen = 7;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& s, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[pos + i])) << (8 * i);
  return v;
}
}  // namespace

void write(const std::filesystem::path& path, const json& meta,
           const std::vector<std::pair<std::string, const Tensor*>>& tensors, bool float64) {
  json dir = json::array();
  std::string payload;
  for (const auto& [name, t] : tensors) {
    dir.push_back(json{{"name", name}, {"shape", t->shape()}, {"offset", payload.size()}});
    for (double d : t->data()) {
      if (float64) {
        std::uint64_t bits;
        std::memcpy(&bits, &d, 8);
        for (int i = 0; i < 8; ++i) payload.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
      } else {
        const float f = static_cast<float>(d);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(payload, bits);
      }
    }
  }
  json header = meta;
  header["dtype"] = float64 ? "f64" : "f32";
  header["tensors"] = dir;
  const std::string hs = header.dump();

  std::string out;
  out.append(kMagic, kMagicLen);
  put_u32(out, static_cast<std::uint32_t>(hs.size()));
  out += hs;
  out += payload;
  io::write_file(path, out);
}

Contents read(const std::filesystem::path& path) {
  const std::string s = io::read_file(path);
  if (s.size() < kMagicLen + 4 || std::memcmp(s.data(), kMagic, kMagicLen) != 0)
    throw IoError(path.string() + ": not a MILKIT1 container");
  const std::uint32_t hlen = get_u32(s, kMagicLen);
  const std::size_t payload_start = kMagicLen + 4 + hlen;
  if (s.size() < payload_start) throw IoError(path.string() + ": truncated header");
  Contents c;
  try {
    c.meta = json::parse(s.substr(kMagicLen + 4, hlen));
  } catch (const json::parse_error& e) {
    throw IoError(path.string() + ": corrupt header JSON: " + e.what());
  }
  const bool f64 = c.meta.value("dtype", "f32") == "f64";
  const std::size_t elem = f64 ? 8 : 4;
  for (const auto& entry : c.meta.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<int>>();
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    Tensor t(shape);
    const std::size_t need = payload_start + offset + t.size() * elem;
    if (s.size() < need)
      throw IoError(path.string() + ": tensor " + name + " extends past end of file (byte " +
                    std::to_string(need) + ")");
    for (std::size_t i = 0; i < t.size(); ++i) {
      const std::size_t pos = payload_start + offset + i * elem;
      if (f64) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b)
          bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[pos + b])) << (8 * b);
        double d;
        std::memcpy(&d, &bits, 8);
        t.at(i) = d;
      } else {
        const std::uint32_t bits = get_u32(s, pos);
        float f;
        std::memcpy(&f, &bits, 4);
        t.at(i) = static_cast<double>(f);
      }
    }
    c.tensors.emplace(name, std::move(t));
  }
  return c;
}

}  // namespace container

void save_checkpoint(const std::filesystem::path& path, const json& model_config,
                     const json& train_config, const std::vector<std::string>& class_names,
                     const ParamStore& params) {
  json meta{{"kind", "checkpoint"},
            {"model_config", model_config},
            {"train_config", train_config},
            {"class_names", class_names}};
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  for (const auto& [name, slot] : params) tensors.emplace_back(name, &slot.value);
  container::write(path, meta, tensors, /*float64=*/false);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto c = container::read(path);
  if (c.meta.value("kind", "") != "checkpoint")
    throw IoError(path.string() + ": container is not a checkpoint");
  Checkpoint ck;
  ck.model_config = c.meta.at("model_config");
  ck.train_config = c.meta.value("train_config", json::object());
  ck.class_names = c.meta.at("class_names").get<std::vector<std::string>>();
  for (auto& [name, t] : c.tensors) ck.params.add(name, std::move(t));
  return ck;
}

}  // namespace milkit
