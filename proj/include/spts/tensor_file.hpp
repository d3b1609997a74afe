#pragma once

#include "spts/matrix.hpp"

#include <map>
#include <string>
#include <vector>

namespace spts {

// Flat tensor container. Layout: 8-byte little-endian header length, a text
// header with one `name dtype rows cols offset` line per tensor (offset in
// bytes into the payload), then the concatenated little-endian f32 payload.
struct TensorFile {
    std::vector<std::string> order;        // header order
    std::map<std::string, Matrix> tensors;

    void add(const std::string & name, Matrix m);
    const Matrix & get(const std::string & name) const;
    bool has(const std::string & name) const;
};

void save_tensor_file(const TensorFile & tf, const std::string & path);
TensorFile load_tensor_file(const std::string & path);

} // namespace spts
