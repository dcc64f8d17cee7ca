#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "objbridge/codec.h"
#include "objbridge/errors.h"
#include "objbridge/rng.h"

using namespace objbridge;

namespace {

// Random NAME lexeme: any bytes except '<' and '|'.
std::string random_name(Rng& rng) {
    static const std::string alphabet =
        "abcdefghijklmnopqrstuvwxyz0123456789 _-().,";
    const int len = 1 + rng.uniform_int(12);
    std::string s;
    for (int i = 0; i < len; ++i) {
        s += alphabet[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(alphabet.size())))];
    }
    return s;
}

BBox random_box(Rng& rng) {
    int x1 = rng.uniform_int(1000), x2 = rng.uniform_int(1000);
    int y1 = rng.uniform_int(1000), y2 = rng.uniform_int(1000);
    return BBox{std::min(x1, x2), std::min(y1, y2), std::max(x1, x2), std::max(y1, y2)};
}

}  // namespace

TEST_CASE("quantize_box endpoints and half-up rounding") {
    CHECK(quantize_box({0, 0, 1, 1}) == BBox{0, 0, 999, 999});
    // round(0.5 * 999) = round(499.5) = 500 half-up
    CHECK(quantize_box({0.5, 0.5, 0.5, 0.5}) == BBox{500, 500, 500, 500});
    // 0.4 * 999 = 399.6 -> 400; 0.6 * 999 = 599.4 -> 599
    CHECK(quantize_box({0.4, 0.4, 0.6, 0.6}) == BBox{400, 400, 599, 599});
    CHECK_THROWS_AS(quantize_box({-0.1, 0, 1, 1}), UsageError);
    CHECK_THROWS_AS(quantize_box({0.7, 0, 0.3, 1}), UsageError);
}

TEST_CASE("quantize_box is monotone and inverts dequantize") {
    Rng rng(11);
    for (int i = 0; i < 2000; ++i) {
        const BBox b = random_box(rng);
        CHECK(quantize_box(dequantize_box(b)) == b);
    }
    for (int i = 0; i < 2000; ++i) {
        const double u = rng.uniform01();
        const double v = rng.uniform01();
        const auto lo = quantize_box({std::min(u, v), 0, 1, 1});
        const auto hi = quantize_box({std::max(u, v), 0, 1, 1});
        CHECK(lo.x1 <= hi.x1);
    }
}

TEST_CASE("serialize_reasoning emits the exact template") {
    CHECK(serialize_reasoning("apple", BBox{400, 400, 599, 599}) ==
          "<|object_ref_start|>apple<|object_ref_end|>"
          "<|box_start|>(400,400),(599,599)<|box_end|>.");
    CHECK(serialize_reasoning("a", BBox{0, 0, 0, 0}) ==
          "<|object_ref_start|>a<|object_ref_end|><|box_start|>(0,0),(0,0)<|box_end|>.");
    CHECK_THROWS_AS(serialize_reasoning("bad|name", BBox{0, 0, 0, 0}), UsageError);
    CHECK_THROWS_AS(serialize_reasoning("bad<name", BBox{0, 0, 0, 0}), UsageError);
    CHECK_THROWS_AS(serialize_reasoning("", BBox{0, 0, 0, 0}), UsageError);
}

TEST_CASE("parse_reasoning round-trips 10k random values byte-exact") {
    Rng rng(7);
    for (int i = 0; i < 10000; ++i) {
        const std::string name = random_name(rng);
        const BBox box = random_box(rng);
        const std::string text = serialize_reasoning(name, box);
        const auto [pname, pbox] = parse_reasoning(text);
        REQUIRE(pname == name);
        REQUIRE(pbox == box);
    }
}

TEST_CASE("parse_reasoning rejects unordered boxes at the second pair") {
    const std::string text =
        "<|object_ref_start|>cup<|object_ref_end|><|box_start|>(12,5),(7,9)<|box_end|>.";
    try {
        parse_reasoning(text);
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.offset == text.find("(7,9)") + 1);  // byte offset of x2's digits
    }
}

TEST_CASE("parse_reasoning is strict about surrounding bytes") {
    const std::string valid = serialize_reasoning("cup", BBox{1, 2, 3, 4});
    try {
        parse_reasoning(valid + " ");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.offset == valid.size());
    }
    CHECK_THROWS_AS(parse_reasoning(" " + valid), ParseError);
    CHECK_THROWS_AS(parse_reasoning(""), ParseError);
    // Non-canonical integers would re-serialize differently: reject.
    CHECK_THROWS_AS(parse_reasoning("<|object_ref_start|>cup<|object_ref_end|>"
                                    "<|box_start|>(01,2),(3,4)<|box_end|>."),
                    ParseError);
    // A fourth digit cannot extend an integer.
    CHECK_THROWS_AS(parse_reasoning("<|object_ref_start|>cup<|object_ref_end|>"
                                    "<|box_start|>(1000,2),(3,4)<|box_end|>."),
                    ParseError);
}

TEST_CASE("single-byte mutations never silently mis-parse") {
    Rng rng(23);
    int parsed_ok = 0;
    for (int i = 0; i < 2000; ++i) {
        const std::string name = random_name(rng);
        const BBox box = random_box(rng);
        const std::string text = serialize_reasoning(name, box);
        std::string mutated = text;
        const int pos = rng.uniform_int(static_cast<int>(text.size()));
        char replacement = static_cast<char>(rng.uniform_int(256));
        if (replacement == text[static_cast<std::size_t>(pos)]) replacement = '|';
        mutated[static_cast<std::size_t>(pos)] = replacement;
        try {
            const auto [pname, pbox] = parse_reasoning(mutated);
            // Accepted mutants must be canonical: re-serialization reproduces
            // the mutated bytes exactly, so nothing was silently dropped.
            CHECK(serialize_reasoning(pname, pbox) == mutated);
            ++parsed_ok;
        } catch (const ParseError&) {
            // rejection is always acceptable
        }
    }
    // Sanity: some mutations (inside NAME or digits) must survive.
    CHECK(parsed_ok > 0);
}

TEST_CASE("question_for") {
    CHECK(question_for("apple") == "Detecting the bounding box of apple.");
    // NAME excludes only '<' and '|'; spaces are legal.
    CHECK(question_for("toy cat") == "Detecting the bounding box of toy cat.");
    CHECK_THROWS_AS(question_for("to|y"), UsageError);
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
        CHECK(question_for(random_name(rng)).find("<|") == std::string::npos);
    }
}

TEST_CASE("iou identities and the inclusive-area example") {
    const BBox a{10, 20, 30, 40};
    CHECK(iou(a, a) == doctest::Approx(1.0));
    CHECK(iou(BBox{0, 0, 4, 4}, BBox{10, 10, 14, 14}) == 0.0);
    // Inclusive areas: 100 each, intersection 25, union 175.
    CHECK(iou(BBox{0, 0, 9, 9}, BBox{5, 5, 14, 14}) == doctest::Approx(25.0 / 175.0));
    Rng rng(5);
    for (int i = 0; i < 1000; ++i) {
        const BBox x = random_box(rng), y = random_box(rng);
        CHECK(iou(x, y) == iou(y, x));
        CHECK((iou(x, y) == 1.0) == (x == y));
    }
}
