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

// Fixed-point encoding of signed reals into Paillier plaintexts.
//
// x is represented as (mantissa, exponent) with x ~= mantissa * 2^exponent.
// Negative values are stored as n - |mantissa|, so plaintexts in
// [0, max_number) are non-negative and plaintexts in (n - max_number, n) are
// negative, with max_number = floor(n / 2). Anything in between cannot come
// from a valid encoding and decodes to an error.
//
// All values in one computation share one exponent; additions never change
// it. encode() keeps `headroom_bits` of slack below max_number so that up to
// 2^headroom_bits encoded values can be summed without wrapping.

#ifndef FEDMF_ENCODING_HPP_
#define FEDMF_ENCODING_HPP_

#include <cmath>
#include <string>

#include "fedmf/paillier.hpp"

namespace fedmf {

inline constexpr int kDefaultExponent = -40;
inline constexpr unsigned kDefaultHeadroomBits = 20;

struct EncodedNumber {
  BigInt mantissa;
  int exponent = 0;

  friend bool operator==(const EncodedNumber& a, const EncodedNumber& b) {
    return a.mantissa == b.mantissa && a.exponent == b.exponent;
  }
};

class EncodingOverflow : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

// Plaintext in the band between the positive and negative ranges.
class DecodeError : public Error {
 public:
  using Error::Error;
};

inline EncodedNumber encode(double x, int exponent, const PaillierPublicKey& pk,
                            unsigned headroom_bits = kDefaultHeadroomBits) {
  if (!std::isfinite(x)) throw InvalidArgument("cannot encode non-finite value");
  const double scaled = std::round(std::ldexp(x, -exponent));
  if (!std::isfinite(scaled)) {
    throw EncodingOverflow("value overflows the encoding scale");
  }
  BigInt magnitude(std::abs(scaled));
  const BigInt limit = pk.max_number() >> headroom_bits;
  if (magnitude >= limit) {
    throw EncodingOverflow("|" + std::to_string(x) + "| exceeds the " +
                           std::to_string(headroom_bits) +
                           "-bit headroom of the key");
  }
  EncodedNumber out{magnitude, exponent};
  if (scaled < 0 && magnitude != 0) out.mantissa = pk.n - magnitude;
  return out;
}

namespace internal {

inline double ldexp_big(const BigInt& m, int exponent) {
  long exp2 = 0;
  const double frac = mpz_get_d_2exp(&exp2, m.get_mpz_t());
  return std::ldexp(frac, static_cast<int>(exp2) + exponent);
}

}  // namespace internal

inline double decode(const EncodedNumber& e, const PaillierPublicKey& pk) {
  if (e.mantissa < 0 || e.mantissa >= pk.n) {
    throw DecodeError("mantissa outside [0, n)");
  }
  const BigInt max_number = pk.max_number();
  if (e.mantissa < max_number) return internal::ldexp_big(e.mantissa, e.exponent);
  if (e.mantissa > pk.n - max_number) {
    return -internal::ldexp_big(pk.n - e.mantissa, e.exponent);
  }
  throw DecodeError("plaintext in the overflow band; sum wrapped or corrupted");
}

inline Ciphertext encrypt_encoded(const PaillierPublicKey& pk,
                                  const EncodedNumber& e, RandomSource& rng) {
  return encrypt(pk, e.mantissa, rng, e.exponent);
}

inline Ciphertext encrypt_encoded(const PaillierPublicKey& pk,
                                  const PaillierSecretKey& sk,
                                  const EncodedNumber& e, RandomSource& rng) {
  return encrypt_with_secret(pk, sk, e.mantissa, rng, e.exponent);
}

inline EncodedNumber decrypt_encoded(const PaillierSecretKey& sk,
                                     const Ciphertext& c) {
  return {decrypt(sk, c), c.exponent};
}

}  // namespace fedmf

#endif  // FEDMF_ENCODING_HPP_
