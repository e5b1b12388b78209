#include <catch2/catch_amalgamated.hpp>

#include "lr/lr.hpp"

using namespace lr;

TEST_CASE("decode then encode recovers the latent") {
    const ToyCodec codec(0, {4, 8, 8}, {64, 64});
    SplitMix64 g(21);
    Tensor z({4, 8, 8});
    for (std::size_t n = 0; n < z.numel(); ++n) z[n] = g.next_normal_f();

    const Image img = codec.decode(z);
    REQUIRE(img.height() == 64);
    REQUIRE(img.width() == 64);
    const Tensor back = codec.encode(img);
    REQUIRE(back.same_shape(z));
    REQUIRE(rel_l2(back, z) < 1e-5f);
}

TEST_CASE("codec is deterministic in its seed") {
    const ToyCodec a(7, {2, 4, 4}, {16, 16});
    const ToyCodec b(7, {2, 4, 4}, {16, 16});
    const ToyCodec c(8, {2, 4, 4}, {16, 16});
    Tensor z({2, 4, 4});
    for (std::size_t n = 0; n < z.numel(); ++n) z[n] = 0.1f * float(n) - 1.0f;
    REQUIRE(bit_equal(a.decode(z).data, b.decode(z).data));
    REQUIRE_FALSE(bit_equal(a.decode(z).data, c.decode(z).data));
}

TEST_CASE("encode projects images onto the decodable subspace") {
    // decode(encode(img)) is idempotent: a second round trip changes nothing.
    const ToyCodec codec(3, {2, 4, 4}, {16, 16});
    SplitMix64 g(5);
    Image img;
    img.data = Tensor({3, 16, 16});
    for (std::size_t n = 0; n < img.data.numel(); ++n)
        img.data[n] = g.next_uniform();

    const Tensor z1 = codec.encode(img);
    const Image proj = codec.decode(z1);
    const Tensor z2 = codec.encode(proj);
    REQUIRE(rel_l2(z2, z1) < 1e-5f);
}

TEST_CASE("zero latent decodes to mid-gray") {
    const ToyCodec codec(0, {2, 4, 4}, {16, 16});
    const Image img = codec.decode(Tensor({2, 4, 4}));
    for (std::size_t n = 0; n < img.data.numel(); ++n)
        REQUIRE(img.data[n] == 0.5f);
}

TEST_CASE("codec shape validation") {
    REQUIRE_THROWS_AS(ToyCodec(0, {4, 8, 8}, {60, 64}), validation_error);
    REQUIRE_THROWS_AS(ToyCodec(0, {4, 8, 8}, {64, 60}), validation_error);
    REQUIRE_THROWS_AS(ToyCodec(0, {0, 8, 8}, {64, 64}), validation_error);
    // 1x1 patches carry 3 values, too few for 4 channels.
    REQUIRE_THROWS_AS(ToyCodec(0, {4, 8, 8}, {8, 8}), validation_error);

    const ToyCodec codec(0, {2, 4, 4}, {16, 16});
    REQUIRE_THROWS_AS(codec.decode(Tensor({2, 4, 5})), shape_error);
    Image wrong;
    wrong.data = Tensor({3, 16, 17});
    REQUIRE_THROWS_AS(codec.encode(wrong), shape_error);
    Image nan;
    nan.data = Tensor({3, 16, 16});
    nan.data[0] = std::numeric_limits<float>::quiet_NaN();
    REQUIRE_THROWS_AS(codec.encode(nan), validation_error);
}
