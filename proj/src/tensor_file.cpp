#include "spts/tensor_file.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace spts {

void TensorFile::add(const std::string & name, Matrix m) {
    if (tensors.count(name)) {
        fail(ErrorKind::Format, "tensor file: duplicate tensor name " + name);
    }
    order.push_back(name);
    tensors.emplace(name, std::move(m));
}

const Matrix & TensorFile::get(const std::string & name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
        fail(ErrorKind::Format, "tensor file: unknown tensor name " + name);
    }
    return it->second;
}

bool TensorFile::has(const std::string & name) const {
    return tensors.count(name) != 0;
}

namespace {

void put_u64_le(std::ostream & os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) {
        b[i] = (unsigned char)((v >> (8 * i)) & 0xff);
    }
    os.write((const char *)b, 8);
}

uint64_t get_u64_le(std::istream & is) {
    unsigned char b[8];
    is.read((char *)b, 8);
    if (!is) {
        fail(ErrorKind::Format, "tensor file: truncated header length");
    }
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= uint64_t(b[i]) << (8 * i);
    }
    return v;
}

void put_f32_le(std::ostream & os, const float * src, size_t n) {
    std::vector<unsigned char> buf(n * 4);
    for (size_t i = 0; i < n; ++i) {
        uint32_t bits;
        std::memcpy(&bits, src + i, 4);
        buf[4 * i + 0] = (unsigned char)(bits & 0xff);
        buf[4 * i + 1] = (unsigned char)((bits >> 8) & 0xff);
        buf[4 * i + 2] = (unsigned char)((bits >> 16) & 0xff);
        buf[4 * i + 3] = (unsigned char)((bits >> 24) & 0xff);
    }
    os.write((const char *)buf.data(), (std::streamsize)buf.size());
}

void get_f32_le(const unsigned char * src, float * dst, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        uint32_t bits = uint32_t(src[4 * i]) |
                        (uint32_t(src[4 * i + 1]) << 8) |
                        (uint32_t(src[4 * i + 2]) << 16) |
                        (uint32_t(src[4 * i + 3]) << 24);
        std::memcpy(dst + i, &bits, 4);
    }
}

} // namespace

void save_tensor_file(const TensorFile & tf, const std::string & path) {
    std::ostringstream header;
    uint64_t offset = 0;
    for (const auto & name : tf.order) {
        const Matrix & m = tf.tensors.at(name);
        header << name << " f32 " << m.rows << " " << m.cols << " " << offset << "\n";
        offset += uint64_t(m.rows) * m.cols * 4;
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        fail(ErrorKind::Input, "cannot open for writing: " + path);
    }
    std::string h = header.str();
    put_u64_le(os, h.size());
    os.write(h.data(), (std::streamsize)h.size());
    for (const auto & name : tf.order) {
        const Matrix & m = tf.tensors.at(name);
        put_f32_le(os, m.data.data(), m.data.size());
    }
    if (!os) {
        fail(ErrorKind::Input, "write failed: " + path);
    }
}

TensorFile load_tensor_file(const std::string & path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        fail(ErrorKind::Input, "cannot open for reading: " + path);
    }
    uint64_t hlen = get_u64_le(is);
    std::string header(hlen, '\0');
    is.read(header.data(), (std::streamsize)hlen);
    if (!is) {
        fail(ErrorKind::Format, "tensor file: truncated header");
    }
    std::vector<unsigned char> payload((std::istreambuf_iterator<char>(is)),
                                       std::istreambuf_iterator<char>());

    TensorFile tf;
    std::istringstream hs(header);
    std::string line;
    uint64_t expected_offset = 0;
    while (std::getline(hs, line)) {
        if (line.empty()) {
            continue;
        }
        std::istringstream ls(line);
        std::string name, dtype;
        uint64_t rows, cols, offset;
        if (!(ls >> name >> dtype >> rows >> cols >> offset)) {
            fail(ErrorKind::Format, "tensor file: malformed header line: " + line);
        }
        if (dtype != "f32") {
            fail(ErrorKind::Format, "tensor file: unsupported dtype " + dtype);
        }
        if (offset != expected_offset) {
            fail(ErrorKind::Format, "tensor file: offsets out of order or overlapping");
        }
        uint64_t bytes = rows * cols * 4;
        if (offset + bytes > payload.size()) {
            fail(ErrorKind::Format, "tensor file: payload shorter than header claims");
        }
        Matrix m(rows, cols);
        get_f32_le(payload.data() + offset, m.data.data(), rows * cols);
        tf.add(name, std::move(m));
        expected_offset = offset + bytes;
    }
    if (expected_offset != payload.size()) {
        fail(ErrorKind::Format, "tensor file: payload length mismatch");
    }
    return tf;
}

} // namespace spts
