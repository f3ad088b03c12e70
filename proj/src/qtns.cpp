#include "staticquant/qtns.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace sq {

namespace {

constexpr char kMagic[4] = {'Q', 'T', 'N', 'S'};
constexpr std::uint16_t kVersion = 1;

void put_bytes(std::string& buf, std::uint64_t value, int bytes) {
  for (int i = 0; i < bytes; ++i) {
    buf.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
  }
}

class Reader {
 public:
  Reader(std::string data, std::string path)
      : data_(std::move(data)), path_(std::move(path)) {}

  std::uint64_t take(int bytes, const char* what) {
    if (pos_ + static_cast<std::size_t>(bytes) > data_.size()) {
      throw IoError(path_ + ": truncated " + what);
    }
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i]))
           << (8 * i);
    }
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }

  void expect_magic() {
    if (data_.size() < 4) throw IoError(path_ + ": truncated header");
    if (std::memcmp(data_.data(), kMagic, 4) != 0) {
      throw IoError(path_ + ": bad magic (not a QTNS file)");
    }
    pos_ = 4;
  }

  std::size_t remaining() const { return data_.size() - pos_; }
  const std::string& path() const { return path_; }

 private:
  std::string data_;
  std::string path_;
  std::size_t pos_ = 0;
};

void write_file(const std::string& path, const std::string& buf) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path + ": cannot open for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError(path + ": write failed");
}

std::string header(QtnsDtype dtype, const std::vector<std::size_t>& dims) {
  std::string buf(kMagic, 4);
  put_bytes(buf, kVersion, 2);
  put_bytes(buf, static_cast<std::uint64_t>(dtype), 1);
  put_bytes(buf, dims.size(), 4);
  for (std::size_t d : dims) put_bytes(buf, d, 8);
  return buf;
}

}  // namespace

void save_qtns(const std::string& path, const Tensor& tensor) {
  std::string buf = header(QtnsDtype::f32, tensor.shape());
  for (std::size_t i = 0; i < tensor.size(); ++i) {
    put_bytes(buf, std::bit_cast<std::uint32_t>(tensor[i]), 4);
  }
  write_file(path, buf);
}

void save_qtns(const std::string& path, const TensorI32& tensor) {
  std::string buf = header(QtnsDtype::i32, tensor.shape);
  for (std::int32_t v : tensor.data) {
    put_bytes(buf, static_cast<std::uint32_t>(v), 4);
  }
  write_file(path, buf);
}

QtnsFile load_qtns(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  Reader r(std::move(data), path);
  r.expect_magic();
  const auto version = static_cast<std::uint16_t>(r.take(2, "version"));
  if (version != kVersion) {
    throw IoError(path + ": unsupported version " + std::to_string(version));
  }
  const auto dtype_code = static_cast<unsigned char>(r.take(1, "dtype"));
  if (dtype_code != 1 && dtype_code != 2) {
    throw IoError(path + ": unknown dtype code " + std::to_string(dtype_code));
  }
  const auto rank = static_cast<std::size_t>(r.take(4, "rank"));
  std::vector<std::size_t> dims(rank);
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    dims[i] = static_cast<std::size_t>(r.take(8, "dims"));
    if (dims[i] == 0) throw IoError(path + ": zero dimension");
    count *= dims[i];
  }
  if (r.remaining() < count * 4) throw IoError(path + ": truncated payload");
  if (r.remaining() > count * 4) throw IoError(path + ": trailing bytes after payload");

  QtnsFile file;
  file.dtype = static_cast<QtnsDtype>(dtype_code);
  if (file.dtype == QtnsDtype::f32) {
    std::vector<float> values(count);
    for (std::size_t i = 0; i < count; ++i) {
      values[i] = std::bit_cast<float>(static_cast<std::uint32_t>(r.take(4, "payload")));
    }
    file.f32 = Tensor(dims, std::move(values));
  } else {
    file.i32.shape = dims;
    file.i32.data.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      file.i32.data[i] = static_cast<std::int32_t>(
          static_cast<std::uint32_t>(r.take(4, "payload")));
    }
  }
  return file;
}

Tensor load_qtns_f32(const std::string& path) {
  QtnsFile f = load_qtns(path);
  if (f.dtype != QtnsDtype::f32) throw IoError(path + ": expected a float32 tensor");
  return std::move(f.f32);
}

TensorI32 load_qtns_i32(const std::string& path) {
  QtnsFile f = load_qtns(path);
  if (f.dtype != QtnsDtype::i32) throw IoError(path + ": expected an int32 tensor");
  return std::move(f.i32);
}

}  // namespace sq
