/*
 * Copyright 2026 The FedMF Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Paillier cryptosystem with generator g = n + 1.
//
//   Enc(m; r)  = g^m r^n mod n^2 = (1 + m n) r^n mod n^2
//   Dec(c)     = L(c^lambda mod n^2) mu mod n,  L(x) = (x - 1) / n
//
// Homomorphic operations, all modulo n^2 on ciphertexts and modulo n on the
// plaintexts they carry:
//
//   add_cipher(E(a), E(b)) = E(a) E(b)        -> a + b
//   add_plain(E(a), b)     = E(a) g^b         -> a + b
//   mul_plain(E(a), k)     = E(a)^k           -> a k
//
// Big-integer arithmetic is GMP's. Randomness comes from a RandomSource owned
// by the caller; share one per thread, not across threads.

#ifndef FEDMF_PAILLIER_HPP_
#define FEDMF_PAILLIER_HPP_

#include <gmpxx.h>

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <string_view>

#include "fedmf/common.hpp"

namespace fedmf {

using BigInt = mpz_class;

inline std::string to_hex(const BigInt& x) {
  if (x < 0) throw InvalidArgument("negative value has no hex encoding");
  return x.get_str(16);
}

inline BigInt from_hex(std::string_view s) {
  if (s.empty()) throw FormatError("empty hex string");
  for (char ch : s) {
    if (!((ch >= '0' && ch <= '9') || (ch >= 'a' && ch <= 'f'))) {
      throw FormatError("invalid hex digit in '" + std::string(s) + "'");
    }
  }
  return BigInt(std::string(s), 16);
}

inline std::size_t bit_length(const BigInt& x) {
  return x == 0 ? 0 : mpz_sizeinbase(x.get_mpz_t(), 2);
}

// Seedable big-integer generator (GMP Mersenne Twister).
class RandomSource {
 public:
  explicit RandomSource(std::uint64_t seed)
      : state_(std::make_unique<gmp_randclass>(gmp_randinit_mt)) {
    state_->seed(BigInt(std::to_string(seed)));
  }

  // Seeded from the operating system's entropy pool.
  static RandomSource from_entropy() {
    std::random_device dev;
    std::uint64_t seed = (static_cast<std::uint64_t>(dev()) << 32) ^ dev();
    RandomSource out(seed);
    BigInt wide = 0;
    for (int i = 0; i < 8; ++i) wide = (wide << 32) + dev();
    out.state_->seed(wide);
    return out;
  }

  // Uniform in [0, bound).
  BigInt below(const BigInt& bound) { return state_->get_z_range(bound); }

  // Uniform in [0, 2^bits).
  BigInt bits(std::size_t n) { return state_->get_z_bits(n); }

 private:
  std::unique_ptr<gmp_randclass> state_;
};

inline constexpr int kMillerRabinRounds = 64;

// Miller-Rabin with random bases, after trial division by small primes.
inline bool is_probable_prime(const BigInt& n, RandomSource& rng,
                              int rounds = kMillerRabinRounds) {
  if (n < 2) return false;
  static constexpr std::array<unsigned, 25> kSmall = {
      2,  3,  5,  7,  11, 13, 17, 19, 23, 29, 31, 37, 41,
      43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97};
  for (unsigned p : kSmall) {
    if (n == p) return true;
    if (mpz_divisible_ui_p(n.get_mpz_t(), p)) return false;
  }
  const BigInt n_minus_1 = n - 1;
  BigInt d = n_minus_1;
  std::size_t s = 0;
  while (mpz_even_p(d.get_mpz_t())) {
    d >>= 1;
    ++s;
  }
  BigInt x;
  for (int round = 0; round < rounds; ++round) {
    const BigInt a = rng.below(n - 3) + 2;  // [2, n-2]
    mpz_powm(x.get_mpz_t(), a.get_mpz_t(), d.get_mpz_t(), n.get_mpz_t());
    if (x == 1 || x == n_minus_1) continue;
    bool witness = true;
    for (std::size_t r = 1; r < s; ++r) {
      x = (x * x) % n;
      if (x == n_minus_1) {
        witness = false;
        break;
      }
    }
    if (witness) return false;
  }
  return true;
}

// Random prime with exactly `bits` bits.
inline BigInt random_prime(std::size_t bits, RandomSource& rng) {
  if (bits < 2) throw InvalidArgument("prime size must be at least 2 bits");
  for (;;) {
    BigInt candidate = rng.bits(bits);
    mpz_setbit(candidate.get_mpz_t(), bits - 1);
    if (bits > 2) mpz_setbit(candidate.get_mpz_t(), 0);
    if (is_probable_prime(candidate, rng)) return candidate;
  }
}

struct PaillierPublicKey {
  BigInt n;
  BigInt n_squared;
  BigInt g;
  std::size_t key_bits = 0;

  static PaillierPublicKey from_modulus(const BigInt& n) {
    if (n < 15) throw InvalidArgument("modulus too small");
    return {n, n * n, n + 1, bit_length(n)};
  }

  // Plaintexts below this are non-negative; above n - max_number, negative.
  BigInt max_number() const { return n / 2; }

  friend bool operator==(const PaillierPublicKey& a,
                         const PaillierPublicKey& b) {
    return a.n == b.n && a.n_squared == b.n_squared && a.g == b.g &&
           a.key_bits == b.key_bits;
  }
};

struct PaillierSecretKey {
  BigInt p;
  BigInt q;
  BigInt lambda;  // lcm(p - 1, q - 1)
  BigInt mu;      // L(g^lambda mod n^2)^{-1} mod n

  // CRT precomputation.
  BigInt n;
  BigInt p_squared;
  BigInt q_squared;
  BigInt hp;              // L_p(g^{p-1} mod p^2)^{-1} mod p
  BigInt hq;
  BigInt q_inv_mod_p;     // q^{-1} mod p
  BigInt q2_inv_mod_p2;   // (q^2)^{-1} mod p^2
  BigInt n_mod_phi_p2;    // n mod p(p-1)
  BigInt n_mod_phi_q2;    // n mod q(q-1)

  friend bool operator==(const PaillierSecretKey& a,
                         const PaillierSecretKey& b) {
    return a.p == b.p && a.q == b.q && a.lambda == b.lambda && a.mu == b.mu;
  }
};

struct PaillierKeypair {
  PaillierPublicKey public_key;
  PaillierSecretKey secret_key;
};

namespace internal {

inline BigInt mod_inverse(const BigInt& a, const BigInt& m) {
  BigInt out;
  if (mpz_invert(out.get_mpz_t(), a.get_mpz_t(), m.get_mpz_t()) == 0) {
    throw InvalidArgument("value not invertible");
  }
  return out;
}

inline BigInt powm(const BigInt& base, const BigInt& exp, const BigInt& mod) {
  BigInt out;
  mpz_powm(out.get_mpz_t(), base.get_mpz_t(), exp.get_mpz_t(),
           mod.get_mpz_t());
  return out;
}

inline BigInt l_function(const BigInt& x, const BigInt& n) {
  return (x - 1) / n;
}

}  // namespace internal

// Builds a keypair from two distinct primes. Also the test hook for tiny
// hand-checkable keys.
inline PaillierKeypair keypair_from_primes(const BigInt& p, const BigInt& q) {
  if (p == q) throw InvalidArgument("p and q must differ");
  if (p < 2 || q < 2) throw InvalidArgument("p and q must be prime");
  PaillierKeypair kp;
  const BigInt n = p * q;
  kp.public_key = PaillierPublicKey::from_modulus(n);
  PaillierSecretKey& sk = kp.secret_key;
  sk.p = p;
  sk.q = q;
  sk.n = n;
  BigInt g;
  mpz_lcm(g.get_mpz_t(), BigInt(p - 1).get_mpz_t(), BigInt(q - 1).get_mpz_t());
  sk.lambda = g;
  const BigInt& n2 = kp.public_key.n_squared;
  sk.mu = internal::mod_inverse(
      internal::l_function(internal::powm(kp.public_key.g, sk.lambda, n2), n),
      n);
  sk.p_squared = p * p;
  sk.q_squared = q * q;
  sk.hp = internal::mod_inverse(
      internal::l_function(
          internal::powm(kp.public_key.g % sk.p_squared, p - 1, sk.p_squared),
          p),
      p);
  sk.hq = internal::mod_inverse(
      internal::l_function(
          internal::powm(kp.public_key.g % sk.q_squared, q - 1, sk.q_squared),
          q),
      q);
  sk.q_inv_mod_p = internal::mod_inverse(q % p, p);
  sk.q2_inv_mod_p2 = internal::mod_inverse(sk.q_squared % sk.p_squared,
                                           sk.p_squared);
  sk.n_mod_phi_p2 = n % (p * (p - 1));
  sk.n_mod_phi_q2 = n % (q * (q - 1));
  return kp;
}

// Two random primes of key_bits/2 bits each whose product has key_bits bits.
inline PaillierKeypair keygen(std::size_t key_bits, RandomSource& rng) {
  if (key_bits < 8 || key_bits % 2 != 0) {
    throw InvalidArgument("key_bits must be even and at least 8");
  }
  const std::size_t half = key_bits / 2;
  for (;;) {
    const BigInt p = random_prime(half, rng);
    const BigInt q = random_prime(half, rng);
    if (p == q) continue;
    const BigInt n = p * q;
    if (bit_length(n) != key_bits) continue;
    BigInt phi = (p - 1) * (q - 1);
    BigInt gcd;
    mpz_gcd(gcd.get_mpz_t(), n.get_mpz_t(), phi.get_mpz_t());
    if (gcd != 1) continue;
    return keypair_from_primes(p, q);
  }
}

// A Paillier ciphertext plus the fixed-point exponent of the plaintext it
// carries. Raw integer plaintexts use exponent 0.
struct Ciphertext {
  BigInt value;
  int exponent = 0;

  friend bool operator==(const Ciphertext& a, const Ciphertext& b) {
    return a.value == b.value && a.exponent == b.exponent;
  }
};

class ExponentMismatch : public InvalidArgument {
 public:
  ExponentMismatch(int a, int b)
      : InvalidArgument("ciphertext exponents differ: " + std::to_string(a) +
                        " vs " + std::to_string(b)) {}
};

namespace internal {

inline void check_plaintext(const PaillierPublicKey& pk, const BigInt& m) {
  if (m < 0 || m >= pk.n) throw InvalidArgument("plaintext outside [0, n)");
}

inline void check_ciphertext(const PaillierPublicKey& pk, const Ciphertext& c) {
  if (c.value < 0 || c.value >= pk.n_squared) {
    throw InvalidArgument("ciphertext outside [0, n^2)");
  }
}

// g^m mod n^2 for g = n + 1.
inline BigInt generator_power(const PaillierPublicKey& pk, const BigInt& m) {
  return (1 + m * pk.n) % pk.n_squared;
}

}  // namespace internal

// Encryption with a caller-chosen nonce r, gcd(r, n) = 1.
inline Ciphertext encrypt_with_nonce(const PaillierPublicKey& pk,
                                     const BigInt& m, const BigInt& r,
                                     int exponent = 0) {
  internal::check_plaintext(pk, m);
  BigInt gcd;
  mpz_gcd(gcd.get_mpz_t(), r.get_mpz_t(), pk.n.get_mpz_t());
  if (r <= 0 || gcd != 1) throw InvalidArgument("nonce not coprime to n");
  const BigInt rn = internal::powm(r, pk.n, pk.n_squared);
  return {(internal::generator_power(pk, m) * rn) % pk.n_squared, exponent};
}

namespace internal {

inline BigInt random_nonce(const PaillierPublicKey& pk, RandomSource& rng) {
  for (;;) {
    BigInt r = rng.below(pk.n);
    if (r == 0) continue;
    BigInt gcd;
    mpz_gcd(gcd.get_mpz_t(), r.get_mpz_t(), pk.n.get_mpz_t());
    if (gcd == 1) return r;
  }
}

}  // namespace internal

inline Ciphertext encrypt(const PaillierPublicKey& pk, const BigInt& m,
                          RandomSource& rng, int exponent = 0) {
  return encrypt_with_nonce(pk, m, internal::random_nonce(pk, rng), exponent);
}

// r^n mod n^2 through the factorization; same result as the public route.
inline BigInt nonce_power_crt(const PaillierSecretKey& sk, const BigInt& r) {
  const BigInt xp = internal::powm(r % sk.p_squared, sk.n_mod_phi_p2,
                                   sk.p_squared);
  const BigInt xq = internal::powm(r % sk.q_squared, sk.n_mod_phi_q2,
                                   sk.q_squared);
  // x = xq + q^2 * ((xp - xq) * (q^2)^{-1} mod p^2)
  BigInt t = ((xp - xq) * sk.q2_inv_mod_p2) % sk.p_squared;
  if (t < 0) t += sk.p_squared;
  return xq + sk.q_squared * t;
}

// Encryption by a secret-key holder. Produces exactly encrypt_with_nonce's
// ciphertext for the same nonce, with r^n computed by CRT.
inline Ciphertext encrypt_with_secret(const PaillierPublicKey& pk,
                                      const PaillierSecretKey& sk,
                                      const BigInt& m, RandomSource& rng,
                                      int exponent = 0) {
  internal::check_plaintext(pk, m);
  const BigInt rn = nonce_power_crt(sk, internal::random_nonce(pk, rng));
  return {(internal::generator_power(pk, m) * rn) % pk.n_squared, exponent};
}

// Textbook decryption, L(c^lambda mod n^2) mu mod n.
inline BigInt decrypt_reference(const PaillierSecretKey& sk,
                                const Ciphertext& c) {
  const BigInt n2 = sk.n * sk.n;
  if (c.value <= 0 || c.value >= n2) {
    throw InvalidArgument("ciphertext outside (0, n^2)");
  }
  const BigInt x = internal::powm(c.value, sk.lambda, n2);
  return (internal::l_function(x, sk.n) * sk.mu) % sk.n;
}

// CRT decryption; agrees with decrypt_reference.
inline BigInt decrypt(const PaillierSecretKey& sk, const Ciphertext& c) {
  if (c.value <= 0 || c.value >= sk.n * sk.n) {
    throw InvalidArgument("ciphertext outside (0, n^2)");
  }
  BigInt gcd;
  mpz_gcd(gcd.get_mpz_t(), c.value.get_mpz_t(), sk.n.get_mpz_t());
  if (gcd != 1) throw InvalidArgument("ciphertext not invertible mod n^2");
  const BigInt mp =
      (internal::l_function(
           internal::powm(c.value % sk.p_squared, sk.p - 1, sk.p_squared),
           sk.p) *
       sk.hp) %
      sk.p;
  const BigInt mq =
      (internal::l_function(
           internal::powm(c.value % sk.q_squared, sk.q - 1, sk.q_squared),
           sk.q) *
       sk.hq) %
      sk.q;
  BigInt t = ((mp - mq) * sk.q_inv_mod_p) % sk.p;
  if (t < 0) t += sk.p;
  return mq + sk.q * t;
}

inline Ciphertext add_cipher(const PaillierPublicKey& pk, const Ciphertext& a,
                             const Ciphertext& b) {
  if (a.exponent != b.exponent) throw ExponentMismatch(a.exponent, b.exponent);
  internal::check_ciphertext(pk, a);
  internal::check_ciphertext(pk, b);
  return {(a.value * b.value) % pk.n_squared, a.exponent};
}

inline Ciphertext add_plain(const PaillierPublicKey& pk, const Ciphertext& c,
                            const BigInt& m) {
  internal::check_plaintext(pk, m);
  internal::check_ciphertext(pk, c);
  return {(c.value * internal::generator_power(pk, m)) % pk.n_squared,
          c.exponent};
}

inline Ciphertext mul_plain(const PaillierPublicKey& pk, const Ciphertext& c,
                            const BigInt& k) {
  internal::check_plaintext(pk, k);
  internal::check_ciphertext(pk, c);
  return {internal::powm(c.value, k, pk.n_squared), c.exponent};
}

// E(a) -> E(-a mod n), as E(a)^(n-1).
inline Ciphertext negate(const PaillierPublicKey& pk, const Ciphertext& c) {
  return mul_plain(pk, c, pk.n - 1);
}

inline Ciphertext subtract(const PaillierPublicKey& pk, const Ciphertext& a,
                           const Ciphertext& b) {
  return add_cipher(pk, a, negate(pk, b));
}

}  // namespace fedmf

#endif  // FEDMF_PAILLIER_HPP_
