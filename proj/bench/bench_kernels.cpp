// Serial reference vs OpenMP kernels on square images; Arg is the side.

#include "tracetune/kernels.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace tracetune;
namespace k = tracetune::kernels;

namespace {

Image noise(int side, std::uint64_t key) {
    Image img(side, side);
    k::serial::fill_hash_noise(img, key, 1);
    return img;
}

// an off-centre ellipse covering roughly a fifth of the frame
Mask blob(int side) {
    Mask m(side, side);
    const double cx = side * 0.4, cy = side * 0.55, rx = side * 0.3, ry = side * 0.22;
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            const double dx = (x - cx) / rx, dy = (y - cy) / ry;
            if (dx * dx + dy * dy <= 1.0) m.set(x, y, true);
        }
    return m;
}

template <auto Fn>
void BM_darken(benchmark::State& st) {
    const int side = static_cast<int>(st.range(0));
    const Image img = noise(side, 1);
    const Mask m = blob(side);
    const BBox crop{0, 0, side, side};
    for (auto _ : st) benchmark::DoNotOptimize(Fn(img, m, crop));
    st.SetItemsProcessed(st.iterations() * side * side);
}

template <auto Fn>
void BM_composite(benchmark::State& st) {
    const int side = static_cast<int>(st.range(0));
    const Image a = noise(side, 1), b = noise(side, 2);
    const Mask m = blob(side);
    for (auto _ : st) benchmark::DoNotOptimize(Fn(a, b, m));
    st.SetItemsProcessed(st.iterations() * side * side);
}

template <auto Fn>
void BM_bbox(benchmark::State& st) {
    const int side = static_cast<int>(st.range(0));
    const Mask m = blob(side);
    for (auto _ : st) benchmark::DoNotOptimize(Fn(m));
    st.SetItemsProcessed(st.iterations() * side * side);
}

template <auto Fn>
void BM_downscale(benchmark::State& st) {
    const int side = static_cast<int>(st.range(0));
    const Image img = noise(side, 3);
    for (auto _ : st) benchmark::DoNotOptimize(Fn(img, 128));
    st.SetItemsProcessed(st.iterations() * side * side);
}

template <auto Fn>
void BM_noise(benchmark::State& st) {
    const int side = static_cast<int>(st.range(0));
    Image img(side, side);
    for (auto _ : st) {
        Fn(img, 42, 4);
        benchmark::ClobberMemory();
    }
    st.SetItemsProcessed(st.iterations() * side * side);
}

template <auto Fn>
void BM_cosine(benchmark::State& st) {
    const std::size_t rows = static_cast<std::size_t>(st.range(0)), dim = 512;
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<float> u(-1, 1);
    std::vector<float> q(dim), mat(rows * dim), out(rows);
    for (auto& v : q) v = u(rng);
    for (auto& v : mat) v = u(rng);
    for (auto _ : st) {
        Fn(q, mat, dim, out);
        benchmark::DoNotOptimize(out.data());
    }
    st.SetItemsProcessed(st.iterations() * rows);
}

} // namespace

#define SIDES ->Arg(512)->Arg(1024)->Arg(2048)->Unit(benchmark::kMillisecond)

BENCHMARK(BM_darken<k::serial::darken_outside_mask>)->Name("darken/serial") SIDES;
BENCHMARK(BM_darken<k::omp::darken_outside_mask>)->Name("darken/omp") SIDES;
BENCHMARK(BM_composite<k::serial::composite_outside_mask>)->Name("composite/serial") SIDES;
BENCHMARK(BM_composite<k::omp::composite_outside_mask>)->Name("composite/omp") SIDES;
BENCHMARK(BM_bbox<k::serial::mask_bbox>)->Name("mask_bbox/serial") SIDES;
BENCHMARK(BM_bbox<k::omp::mask_bbox>)->Name("mask_bbox/omp") SIDES;
BENCHMARK(BM_downscale<k::serial::downscale>)->Name("downscale/serial") SIDES;
BENCHMARK(BM_downscale<k::omp::downscale>)->Name("downscale/omp") SIDES;
BENCHMARK(BM_noise<k::serial::fill_hash_noise>)->Name("hash_noise/serial") SIDES;
BENCHMARK(BM_noise<k::omp::fill_hash_noise>)->Name("hash_noise/omp") SIDES;
BENCHMARK(BM_cosine<k::serial::cosine_scores>)->Name("cosine/serial")->Arg(64)->Arg(4096);
BENCHMARK(BM_cosine<k::omp::cosine_scores>)->Name("cosine/omp")->Arg(64)->Arg(4096);

BENCHMARK_MAIN();
