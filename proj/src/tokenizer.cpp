#include "lvt/tokenizer.hpp"

namespace lvt {

std::vector<int> ByteTokenizer::encode(std::string_view text) const {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (char c : text) ids.push_back(static_cast<int>(static_cast<unsigned char>(c)));
    return ids;
}

std::string ByteTokenizer::decode(const std::vector<int>& ids) const {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids) {
        if (id >= 0 && id < kByteCount) out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
    }
    return out;
}

} // namespace lvt
