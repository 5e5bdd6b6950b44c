// SPDX-License-Identifier: Apache-2.0
#include "confsearch/serialize.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "confsearch/errors.hpp"

namespace confsearch {

namespace {

void putU32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void putU64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void putF64(std::string& out, double v) { putU64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint32_t getU32(const std::string& s, std::size_t& pos) {
  if (pos + 4 > s.size()) throw IoError("tensor blob truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

std::uint64_t getU64(const std::string& s, std::size_t& pos) {
  if (pos + 8 > s.size()) throw IoError("tensor blob truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[pos + i])) << (8 * i);
  pos += 8;
  return v;
}

double getF64(const std::string& s, std::size_t& pos) {
  return std::bit_cast<double>(getU64(s, pos));
}

}  // namespace

std::string encodeTensors(const std::vector<NamedTensor>& tensors, std::string* indexOut) {
  std::string blob;
  std::ostringstream index;
  for (const NamedTensor& nt : tensors) {
    if (nt.name.find_first_of(" \t\n") != std::string::npos) {
      throw IoError("tensor name contains whitespace: '" + nt.name + "'");
    }
    index << nt.name << " " << blob.size() << " " << nt.tensor.rank();
    for (std::size_t d : nt.tensor.shape()) index << " " << d;
    index << "\n";
    putU32(blob, static_cast<std::uint32_t>(nt.tensor.rank()));
    for (std::size_t d : nt.tensor.shape()) putU64(blob, d);
    for (std::size_t i = 0; i < nt.tensor.size(); ++i) putF64(blob, nt.tensor.at(i));
  }
  if (indexOut) *indexOut = index.str();
  return blob;
}

std::vector<NamedTensor> decodeTensors(const std::string& blob, const std::string& index) {
  std::vector<NamedTensor> out;
  std::istringstream is(index);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name;
    std::size_t offset = 0, rank = 0;
    if (!(ls >> name >> offset >> rank)) throw IoError("malformed tensor index line: " + line);
    std::size_t pos = offset;
    const std::uint32_t blobRank = getU32(blob, pos);
    if (blobRank != rank) throw IoError("tensor index disagrees with blob for " + name);
    std::vector<std::size_t> shape(blobRank);
    std::size_t n = 1;
    for (std::size_t i = 0; i < blobRank; ++i) {
      shape[i] = static_cast<std::size_t>(getU64(blob, pos));
      n *= shape[i];
    }
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = getF64(blob, pos);
    out.push_back({name, Tensor::fromVector(std::move(shape), std::move(values))});
  }
  return out;
}

void saveTensors(const std::string& blobPath, const std::string& indexPath,
                 const std::vector<NamedTensor>& tensors) {
  std::string index;
  const std::string blob = encodeTensors(tensors, &index);
  writeFileAtomic(blobPath, blob);
  writeFileAtomic(indexPath, index);
}

std::vector<NamedTensor> loadTensors(const std::string& blobPath,
                                     const std::string& indexPath) {
  return decodeTensors(readFile(blobPath), readFile(indexPath));
}

const Tensor& findTensor(const std::vector<NamedTensor>& tensors, const std::string& name) {
  for (const NamedTensor& nt : tensors)
    if (nt.name == name) return nt.tensor;
  throw IoError("tensor '" + name + "' not present in manifest");
}

void writeFileAtomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + tmp + " for writing");
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!os) throw IoError("short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw IoError("rename " + tmp + " -> " + path + " failed");
  }
}

std::string readFile(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace confsearch
