// Global allocation aligned to 64 bytes. Eigen peels SIMD reductions up to
// the first aligned element, so the summation order of a mapped std::vector
// depends on where malloc placed it. Uniform alignment keeps every run
// bit-identical under -march=native.

#include <cstdlib>
#include <new>

namespace {

constexpr std::size_t kAlign = 64;

void* aligned_or_null(std::size_t n) noexcept {
  const std::size_t size = n == 0 ? kAlign : (n + kAlign - 1) / kAlign * kAlign;
  return std::aligned_alloc(kAlign, size);
}

void* aligned_or_throw(std::size_t n) {
  for (;;) {
    if (void* p = aligned_or_null(n)) return p;
    auto handler = std::get_new_handler();
    if (handler == nullptr) throw std::bad_alloc();
    handler();
  }
}

}  // namespace

void* operator new(std::size_t n) { return aligned_or_throw(n); }
void* operator new[](std::size_t n) { return aligned_or_throw(n); }
void* operator new(std::size_t n, const std::nothrow_t&) noexcept { return aligned_or_null(n); }
void* operator new[](std::size_t n, const std::nothrow_t&) noexcept { return aligned_or_null(n); }
void operator delete(void* p) noexcept { std::free(p); }
void operator delete[](void* p) noexcept { std::free(p); }
void operator delete(void* p, std::size_t) noexcept { std::free(p); }
void operator delete[](void* p, std::size_t) noexcept { std::free(p); }
void operator delete(void* p, const std::nothrow_t&) noexcept { std::free(p); }
void operator delete[](void* p, const std::nothrow_t&) noexcept { std::free(p); }
