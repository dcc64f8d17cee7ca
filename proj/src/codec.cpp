#include "objbridge/codec.h"

#include <cmath>

#include "objbridge/errors.h"

namespace objbridge {

namespace {

constexpr std::string_view kRefStart = "<|object_ref_start|>";
constexpr std::string_view kRefEnd = "<|object_ref_end|>";
constexpr std::string_view kBoxStart = "<|box_start|>";
constexpr std::string_view kBoxEnd = "<|box_end|>";

}  // namespace

BBox quantize_box(const std::array<double, 4>& n) {
    for (double u : n) {
        if (!(u >= 0.0 && u <= 1.0)) throw UsageError("quantize_box: coordinate outside [0,1]");
    }
    if (n[0] > n[2] || n[1] > n[3]) throw UsageError("quantize_box: unordered box");
    auto bin = [](double u) { return static_cast<int>(std::floor(u * 999.0 + 0.5)); };
    return BBox{bin(n[0]), bin(n[1]), bin(n[2]), bin(n[3])};
}

std::array<double, 4> dequantize_box(const BBox& b) {
    auto center = [](int bin) { return (bin + 0.5) / 1000.0; };
    return {center(b.x1), center(b.y1), center(b.x2), center(b.y2)};
}

bool valid_name(std::string_view name) {
    if (name.empty()) return false;
    for (char c : name) {
        if (c == '<' || c == '|') return false;
    }
    return true;
}

std::string serialize_reasoning(const std::string& name, const BBox& box) {
    if (!valid_name(name)) throw UsageError("serialize_reasoning: illegal name: " + name);
    if (box.x1 < 0 || box.y1 < 0 || box.x2 > 999 || box.y2 > 999 || box.x1 > box.x2 ||
        box.y1 > box.y2) {
        throw UsageError("serialize_reasoning: invalid box");
    }
    std::string out;
    out.reserve(name.size() + 64);
    out += kRefStart;
    out += name;
    out += kRefEnd;
    out += kBoxStart;
    out += '(';
    out += std::to_string(box.x1);
    out += ',';
    out += std::to_string(box.y1);
    out += "),(";
    out += std::to_string(box.x2);
    out += ',';
    out += std::to_string(box.y2);
    out += ')';
    out += kBoxEnd;
    out += '.';
    return out;
}

namespace {

struct Cursor {
    std::string_view s;
    std::size_t pos = 0;

    void expect(std::string_view lit) {
        if (s.substr(pos, lit.size()) != lit) {
            throw ParseError("expected \"" + std::string(lit) + "\"", pos);
        }
        pos += lit.size();
    }

    // Canonical 1-3 digit integer: no leading zeros (except "0" itself).
    int read_int() {
        const std::size_t start = pos;
        std::size_t n = 0;
        while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9' && n < 4) {
            ++pos;
            ++n;
        }
        if (n == 0) throw ParseError("expected integer", start);
        if (n > 3) throw ParseError("integer exceeds 999", start);
        if (n > 1 && s[start] == '0') throw ParseError("non-canonical integer", start);
        int v = 0;
        for (std::size_t i = start; i < pos; ++i) v = v * 10 + (s[i] - '0');
        return v;
    }
};

}  // namespace

std::pair<std::string, BBox> parse_reasoning(std::string_view text) {
    Cursor c{text};
    c.expect(kRefStart);

    const std::size_t name_start = c.pos;
    while (c.pos < text.size() && text[c.pos] != '<' && text[c.pos] != '|') ++c.pos;
    if (c.pos == name_start) throw ParseError("empty name", c.pos);
    std::string name(text.substr(name_start, c.pos - name_start));

    c.expect(kRefEnd);
    c.expect(kBoxStart);
    c.expect("(");
    BBox box;
    box.x1 = c.read_int();
    c.expect(",");
    box.y1 = c.read_int();
    c.expect("),(");
    const std::size_t second_pair = c.pos;
    box.x2 = c.read_int();
    c.expect(",");
    const std::size_t y2_at = c.pos;
    box.y2 = c.read_int();
    c.expect(")");
    if (box.x2 < box.x1) throw ParseError("unordered box: x2 < x1", second_pair);
    if (box.y2 < box.y1) throw ParseError("unordered box: y2 < y1", y2_at);
    c.expect(kBoxEnd);
    c.expect(".");
    if (c.pos != text.size()) throw ParseError("trailing bytes after template", c.pos);
    return {std::move(name), box};
}

std::string question_for(const std::string& name) {
    if (!valid_name(name)) throw UsageError("question_for: illegal name: " + name);
    return "Detecting the bounding box of " + name + ".";
}

double iou(const BBox& a, const BBox& b) {
    auto area = [](const BBox& x) {
        return static_cast<double>(x.x2 - x.x1 + 1) * static_cast<double>(x.y2 - x.y1 + 1);
    };
    const int ix1 = std::max(a.x1, b.x1);
    const int iy1 = std::max(a.y1, b.y1);
    const int ix2 = std::min(a.x2, b.x2);
    const int iy2 = std::min(a.y2, b.y2);
    if (ix1 > ix2 || iy1 > iy2) return 0.0;
    const double inter =
        static_cast<double>(ix2 - ix1 + 1) * static_cast<double>(iy2 - iy1 + 1);
    return inter / (area(a) + area(b) - inter);
}

}  // namespace objbridge
