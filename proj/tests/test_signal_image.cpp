#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <sstream>

#include "sigshot/signal_image.hpp"
#include "sigshot/skeleton.hpp"
#include "sigshot/synth.hpp"

using namespace sigshot;

namespace {

SkeletonSequence two_joint_sequence(int frames, Vec3 a, Vec3 b) {
    SkeletonSequence seq;
    seq.frames = frames;
    seq.joints = 2;
    seq.coords.resize(static_cast<size_t>(frames) * 2);
    for (int t = 0; t < frames; ++t) {
        seq.at(t, 0) = a;
        seq.at(t, 1) = b;
    }
    return seq;
}

} // namespace

TEST_CASE("bone vectors subtract parent from child") {
    SkeletonSequence seq = two_joint_sequence(2, {0, 2, 3}, {1, 2, 3});
    BoneTopology topo;
    topo.bones = {{2, 1}};
    auto vecs = bone_vectors(seq, topo);
    REQUIRE(vecs[0] == Vec3{1, 0, 0});
    REQUIRE(vecs[1] == Vec3{1, 0, 0}); // static sequence, identical at every frame

    SkeletonSequence coincident = two_joint_sequence(2, {1, 1, 1}, {1, 1, 1});
    auto zero = bone_vectors(coincident, topo);
    REQUIRE(zero[0] == Vec3{0, 0, 0});
}

TEST_CASE("bone angle axis cases") {
    Vec3 x = bone_angles({1, 0, 0});
    REQUIRE(x.x == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(x.y == Catch::Approx(kHalfPi));
    REQUIRE(x.z == Catch::Approx(kHalfPi));

    Vec3 xy = bone_angles({1, 1, 0});
    REQUIRE(xy.x == Catch::Approx(kPi / 4));
    REQUIRE(xy.y == Catch::Approx(kPi / 4));
    REQUIRE(xy.z == Catch::Approx(kHalfPi));

    REQUIRE_THROWS_AS(bone_angles({0, 0, 0}), NumericError);
}

TEST_CASE("direction cosines of random bones sum to one") {
    // independent oracle: cos(theta_i) must equal |v_i| / |v| componentwise
    std::mt19937_64 gen(42);
    std::uniform_real_distribution<double> coord(-1.0, 1.0);
    for (int trial = 0; trial < 10000; ++trial) {
        Vec3 v{coord(gen), coord(gen), coord(gen)};
        if (v.norm() < 1e-6) continue;
        Vec3 th = bone_angles(v);
        double s = std::cos(th.x) * std::cos(th.x) + std::cos(th.y) * std::cos(th.y) +
                   std::cos(th.z) * std::cos(th.z);
        REQUIRE(std::abs(s - 1.0) < 1e-9);
        REQUIRE(std::cos(th.x) == Catch::Approx(std::abs(v.x) / v.norm()).margin(1e-12));
    }
}

TEST_CASE("angle field stays in range and substitutes zero bones") {
    SkeletonSequence seq = two_joint_sequence(3, {0, 0, 0}, {1, 0, 0});
    seq.at(1, 1) = {0, 0, 0}; // bone collapses at frame 2
    BoneTopology topo;
    topo.bones = {{2, 1}};
    AngleField f = angle_field(seq, topo);
    REQUIRE(f.at(0, 1).x == f.at(0, 0).x); // carried from the previous frame
    for (const Vec3& a : f.angles)
        for (int c = 0; c < 3; ++c) {
            REQUIRE(a[c] >= 0.0);
            REQUIRE(a[c] <= kHalfPi + 1e-12);
        }

    // collapse at the first frame -> pi/2 triple
    SkeletonSequence head = two_joint_sequence(2, {0, 0, 0}, {0, 0, 0});
    head.at(1, 1) = {1, 0, 0};
    AngleField g = angle_field(head, topo);
    REQUIRE(g.at(0, 0).x == kHalfPi);
    REQUIRE(g.at(0, 0).y == kHalfPi);
    REQUIRE(g.at(0, 0).z == kHalfPi);
}

TEST_CASE("position image endpoints, midpoint and degenerate channels") {
    SkeletonSequence seq;
    seq.frames = 3;
    seq.joints = 2;
    seq.coords.resize(6);
    // x channel spans [-1, 1] with 0 in the middle; y and z constant
    seq.at(0, 0) = {-1, 5, 5};
    seq.at(1, 0) = {0, 5, 5};
    seq.at(2, 0) = {1, 5, 5};
    seq.at(0, 1) = {-1, 5, 5};
    seq.at(1, 1) = {0, 5, 5};
    seq.at(2, 1) = {1, 5, 5};
    SignalImage img = position_image(seq);
    REQUIRE(img.height == 2);
    REQUIRE(img.width == 3);
    REQUIRE(img.at(0, 0, 0) == 0);
    REQUIRE(img.at(0, 1, 0) == 128); // round-half-up of 127.5
    REQUIRE(img.at(0, 2, 0) == 255);
    REQUIRE(img.at(0, 0, 1) == 0); // flat channel
    REQUIRE(img.at(0, 0, 2) == 0);
}

TEST_CASE("constant sequence maps to the all-zero image") {
    SkeletonSequence seq = two_joint_sequence(4, {1, 2, 3}, {4, 5, 6});
    SignalImage img = position_image(seq);
    bool not_all_zero = false;
    // both joints are constant over time but differ from each other, so the
    // channels are not flat; a truly constant-everything sequence is flat:
    SkeletonSequence flat = two_joint_sequence(4, {1, 2, 3}, {1, 2, 3});
    SignalImage zero = position_image(flat);
    for (std::uint8_t p : zero.pixels) not_all_zero = not_all_zero || p != 0;
    REQUIRE_FALSE(not_all_zero);
    (void)img;
}

TEST_CASE("position image is invariant to global translation") {
    Manifest m = make_benchmark_manifest(1, 1, 20, 0.02, 31);
    SkeletonSequence seq = synth_action(m.classes[0].spec, 20, 1.0, 0.02, 17);
    SkeletonSequence moved = seq;
    for (Vec3& p : moved.coords) p = p + Vec3{1.5, -2.25, 0.75};
    REQUIRE(position_image(seq) == position_image(moved));
}

TEST_CASE("orientation image values and invariances") {
    BoneTopology topo;
    topo.bones = {{2, 1}};

    SkeletonSequence seq = two_joint_sequence(3, {0, 0, 0}, {1, 0, 0});
    SignalImage img = orientation_image(seq, topo);
    REQUIRE(img.height == 1);
    REQUIRE(img.width == 3);
    for (int t = 0; t < 3; ++t) {
        REQUIRE(img.at(0, t, 0) == 0);
        REQUIRE(img.at(0, t, 1) == 255);
        REQUIRE(img.at(0, t, 2) == 255);
    }

    // diagonal bone: arccos(1/sqrt(3)) scaled to 155 on all channels
    SkeletonSequence diag = two_joint_sequence(2, {0, 0, 0}, {1, 1, 1});
    SignalImage dimg = orientation_image(diag, topo);
    for (int ch = 0; ch < 3; ++ch) REQUIRE(dimg.at(0, 0, ch) == 155);

    Manifest m = make_benchmark_manifest(1, 1, 16, 0.01, 77);
    SkeletonSequence action = synth_action(m.classes[0].spec, 16, 1.0, 0.01, 5);
    BoneTopology full = default_ntu_topology();
    SignalImage base = orientation_image(action, full);

    SkeletonSequence moved = action;
    for (Vec3& p : moved.coords) p = p + Vec3{10.0, -3.0, 0.5};
    REQUIRE(orientation_image(moved, full) == base);

    SkeletonSequence scaled = action;
    for (Vec3& p : scaled.coords) p = p * 2.0;
    REQUIRE(orientation_image(scaled, full) == base);
}

TEST_CASE("orientation image has X-1 rows") {
    Manifest m = make_benchmark_manifest(1, 1, 10, 0.0, 3);
    SkeletonSequence seq = synth_action(m.classes[0].spec, 10, 1.0, 0.0, 8);
    SignalImage img = orientation_image(seq, default_ntu_topology());
    REQUIRE(img.height == 24);
    REQUIRE(img.width == 10);
}

TEST_CASE("bilinear resize") {
    SECTION("identity resize returns the same pixels") {
        Manifest m = make_benchmark_manifest(1, 1, 12, 0.01, 13);
        SignalImage img = position_image(synth_action(m.classes[0].spec, 12, 1.0, 0.01, 2));
        SignalImage same = resize_bilinear(img, img.height, img.width);
        REQUIRE(same == img);
    }
    SECTION("constant image stays constant at any size") {
        SignalImage img(3, 5, ImageKind::position);
        for (std::uint8_t& p : img.pixels) p = 77;
        SignalImage big = resize_bilinear(img, 17, 11);
        for (std::uint8_t p : big.pixels) REQUIRE(p == 77);
    }
    SECTION("2x2 to 2x3 interpolates the middle column to 128") {
        SignalImage img(2, 2, ImageKind::position);
        for (int r = 0; r < 2; ++r)
            for (int ch = 0; ch < 3; ++ch) {
                img.at(r, 0, ch) = 0;
                img.at(r, 1, ch) = 255;
            }
        SignalImage out = resize_bilinear(img, 2, 3);
        for (int r = 0; r < 2; ++r) {
            REQUIRE(out.at(r, 0, 0) == 0);
            REQUIRE(out.at(r, 1, 0) == 128);
            REQUIRE(out.at(r, 2, 0) == 255);
        }
    }
}

TEST_CASE("early fusion stacks heights then resizes") {
    Manifest m = make_benchmark_manifest(1, 1, 14, 0.01, 21);
    SkeletonSequence seq = synth_action(m.classes[0].spec, 14, 1.0, 0.01, 4);
    BoneTopology topo = default_ntu_topology();
    SignalImage pos = position_image(seq);
    SignalImage ori = orientation_image(seq, topo);

    SignalImage stacked = stack_images(pos, ori);
    REQUIRE(stacked.height == 49);
    REQUIRE(stacked.width == 14);
    REQUIRE(stacked.kind == ImageKind::fused);

    SignalImage fused = early_fuse(pos, ori, 192, 192);
    REQUIRE(fused.height == 192);
    REQUIRE(fused.width == 192);

    SignalImage narrow = resize_bilinear(ori, 24, 12);
    try {
        early_fuse(pos, narrow, 32, 32);
        FAIL();
    } catch (const Error& e) {
        REQUIRE(e.code() == "WidthMismatch");
    }
}

TEST_CASE("ppm round-trip preserves pixels and kind") {
    Manifest m = make_benchmark_manifest(1, 1, 9, 0.01, 55);
    SkeletonSequence seq = synth_action(m.classes[0].spec, 9, 1.0, 0.01, 6);
    SignalImage img = orientation_image(seq, default_ntu_topology());
    std::ostringstream out;
    write_ppm(img, out, "unit-test");
    std::istringstream in(out.str());
    SignalImage back = read_ppm(in);
    REQUIRE(back == img);
}

TEST_CASE("angle csv has a row per bone and frame") {
    SkeletonSequence seq = two_joint_sequence(3, {0, 0, 0}, {0, 1, 0});
    BoneTopology topo;
    topo.bones = {{2, 1}};
    std::ostringstream out;
    write_angle_csv(angle_field(seq, topo), out);
    std::istringstream in(out.str());
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) rows++;
    REQUIRE(rows == 1 + 3); // header + bones*frames
    REQUIRE(out.str().substr(0, 10) == "bone,frame");
}
