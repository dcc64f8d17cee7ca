#pragma once

#include <array>
#include <string>
#include <string_view>
#include <utility>

namespace objbridge {

// Quantized box over the unit image: integer bins in [0, 999], ordered.
struct BBox {
    int x1 = 0, y1 = 0, x2 = 0, y2 = 0;
    bool operator==(const BBox&) const = default;
};

// bin = round(u * 999), half-up. Input must be in [0,1]^4 with x1<=x2, y1<=y2.
BBox quantize_box(const std::array<double, 4>& normalized);

// Center of the bin: (bin + 0.5) / 1000. quantize(dequantize(b)) == b.
std::array<double, 4> dequantize_box(const BBox& b);

// NAME lexeme: one or more bytes, none of which is '<' or '|'.
bool valid_name(std::string_view name);

// Emits exactly:
//   <|object_ref_start|>NAME<|object_ref_end|><|box_start|>(x1,y1),(x2,y2)<|box_end|>.
// with canonical (unpadded) integers and no whitespace.
std::string serialize_reasoning(const std::string& name, const BBox& box);

// Strict inverse of serialize_reasoning: no leading/trailing bytes, no
// whitespace tolerance, canonical integers only (a leading zero would
// re-serialize differently, i.e. silently mis-parse). Throws ParseError with
// the byte offset of the first violation.
std::pair<std::string, BBox> parse_reasoning(std::string_view text);

// "Detecting the bounding box of {name}."
std::string question_for(const std::string& name);

// Intersection over union with cell-inclusive areas (x2-x1+1)*(y2-y1+1).
double iou(const BBox& a, const BBox& b);

}  // namespace objbridge
