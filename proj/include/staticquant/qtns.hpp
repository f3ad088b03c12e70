#pragma once

#include <string>

#include "staticquant/tensor.hpp"

namespace sq {

/// QTNS binary tensor format:
///   magic "QTNS" | u16 version=1 | u8 dtype (1=float32, 2=int32) |
///   u32 rank | rank x u64 dims | row-major payload, all little-endian.
/// Round trips are bit-exact.
enum class QtnsDtype : unsigned char { f32 = 1, i32 = 2 };

struct QtnsFile {
  QtnsDtype dtype = QtnsDtype::f32;
  Tensor f32;
  TensorI32 i32;
};

void save_qtns(const std::string& path, const Tensor& tensor);
void save_qtns(const std::string& path, const TensorI32& tensor);
QtnsFile load_qtns(const std::string& path);
Tensor load_qtns_f32(const std::string& path);
TensorI32 load_qtns_i32(const std::string& path);

}  // namespace sq
