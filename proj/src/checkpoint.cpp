#include "panodapt/checkpoint.hpp"

#include <cstdio>

namespace panodapt::ckpt {

namespace {
constexpr std::uint32_t kMagic = 0x314B4350;  // "PCK1"
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  std::FILE* fp = std::fopen(path.string().c_str(), "wb");
  require(fp != nullptr, "cannot open checkpoint for writing: " + path.string());
  std::uint32_t head[2] = {kMagic, kVersion};
  std::fwrite(head, sizeof(head), 1, fp);
  std::uint64_t iter = c.iteration;
  std::fwrite(&iter, sizeof(iter), 1, fp);
  std::uint32_t count = std::uint32_t(c.tensors.size());
  std::fwrite(&count, sizeof(count), 1, fp);
  bool ok = true;
  for (const auto& [name, t] : c.tensors) {
    std::uint16_t len = std::uint16_t(name.size());
    std::fwrite(&len, sizeof(len), 1, fp);
    std::fwrite(name.data(), 1, len, fp);
    std::uint32_t dims[3] = {std::uint32_t(t.c), std::uint32_t(t.h), std::uint32_t(t.w)};
    std::fwrite(dims, sizeof(dims), 1, fp);
    ok = ok && std::fwrite(t.v.data(), sizeof(float), t.v.size(), fp) == t.v.size();
  }
  std::fclose(fp);
  require(ok, "short write on checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::FILE* fp = std::fopen(path.string().c_str(), "rb");
  require(fp != nullptr, "cannot open checkpoint: " + path.string());
  auto fail = [&](const std::string& msg) {
    std::fclose(fp);
    throw ValidationError(msg + ": " + path.string());
  };
  std::uint32_t head[2];
  if (std::fread(head, sizeof(head), 1, fp) != 1 || head[0] != kMagic)
    fail("not a checkpoint file");
  if (head[1] != kVersion) fail("unsupported checkpoint version");
  Checkpoint c;
  if (std::fread(&c.iteration, sizeof(c.iteration), 1, fp) != 1) fail("truncated checkpoint");
  std::uint32_t count = 0;
  if (std::fread(&count, sizeof(count), 1, fp) != 1 || count > 100000)
    fail("truncated checkpoint");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint16_t len = 0;
    if (std::fread(&len, sizeof(len), 1, fp) != 1) fail("truncated checkpoint");
    std::string name(len, '\0');
    if (len && std::fread(name.data(), 1, len, fp) != len) fail("truncated checkpoint");
    std::uint32_t dims[3];
    if (std::fread(dims, sizeof(dims), 1, fp) != 1) fail("truncated checkpoint");
    if (std::uint64_t(dims[0]) * dims[1] * dims[2] > (std::uint64_t(1) << 31))
      fail("absurd tensor size in checkpoint");
    Tensor<float> t{int(dims[0]), int(dims[1]), int(dims[2])};
    if (std::fread(t.v.data(), sizeof(float), t.v.size(), fp) != t.v.size())
      fail("truncated checkpoint");
    c.tensors.push_back({std::move(name), std::move(t)});
  }
  std::fclose(fp);
  return c;
}

}  // namespace panodapt::ckpt
