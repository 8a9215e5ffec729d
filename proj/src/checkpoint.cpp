#include "hires/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "hires/errors.hpp"

namespace hires {

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

const NamedTensor* Container::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void write_container(const Container& c, const std::filesystem::path& path) {
  nlohmann::json header = c.header;
  header["format_version"] = kContainerVersion;
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : c.tensors) {
    const auto expect = std::accumulate(t.shape.begin(), t.shape.end(), std::size_t{1},
                                        [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
    require(expect == t.data.size(), "write_container: shape does not match data for " + t.name);
    index.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"count", t.data.size()}});
    offset += t.data.size() * sizeof(float);
  }
  header["tensors"] = index;
  const std::string text = header.dump();

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(kContainerMagic, sizeof(kContainerMagic));
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : c.tensors) {
      out.write(reinterpret_cast<const char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    }
    if (!out) throw IoError("write failed: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  constexpr std::size_t kPrefix = sizeof(kContainerMagic) + sizeof(std::uint64_t);
  if (bytes.size() < kPrefix || std::memcmp(bytes.data(), kContainerMagic, sizeof(kContainerMagic)) != 0) {
    throw CheckpointError(path.string() + ": not a checkpoint container");
  }
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + sizeof(kContainerMagic), sizeof(len));
  if (len > bytes.size() - kPrefix) throw CheckpointError(path.string() + ": truncated header");

  Container c;
  try {
    c.header = nlohmann::json::parse(bytes.begin() + kPrefix, bytes.begin() + kPrefix + static_cast<long>(len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": bad header: " + e.what());
  }
  if (c.header.value("format_version", -1) != kContainerVersion) {
    throw CheckpointError(path.string() + ": unsupported format version");
  }
  const std::size_t data_start = kPrefix + len;
  const std::size_t data_size = bytes.size() - data_start;
  try {
    for (const auto& entry : c.header.at("tensors")) {
      NamedTensor t;
      t.name = entry.at("name").get<std::string>();
      t.shape = entry.at("shape").get<std::vector<int>>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto count = entry.at("count").get<std::uint64_t>();
      if (offset > data_size || count > (data_size - offset) / sizeof(float)) {
        throw CheckpointError(path.string() + ": truncated tensor " + t.name);
      }
      t.data.resize(count);
      std::memcpy(t.data.data(), bytes.data() + data_start + offset, count * sizeof(float));
      c.tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": bad tensor index: " + e.what());
  }
  c.header.erase("tensors");
  return c;
}

std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int n = 0;
  EVP_DigestFinal_ex(ctx, digest, &n);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < n; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

}  // namespace hires
