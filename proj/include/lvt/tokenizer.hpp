#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "lvt/config.hpp"

namespace lvt {

/// Byte-level vocabulary: ids 0..255 are raw bytes, specials follow.
class ByteTokenizer {
public:
    static constexpr int kByteCount = 256;

    explicit ByteTokenizer(SpecialTokens specials = {}) : specials_(specials) {}

    std::vector<int> encode(std::string_view text) const;
    /// Bytes are copied through; special ids are dropped.
    std::string decode(const std::vector<int>& ids) const;

    const SpecialTokens& specials() const { return specials_; }
    int vocab_size() const { return kByteCount + 4; }
    bool is_special(int id) const { return id >= kByteCount; }

private:
    SpecialTokens specials_;
};

} // namespace lvt
