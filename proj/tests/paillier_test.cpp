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

#include "fedmf/paillier.hpp"

#include "fedmf/encoding.hpp"
#include "gtest/gtest.h"

namespace fedmf {
namespace {

PaillierKeypair toy_35() { return keypair_from_primes(5, 7); }

class PaillierTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    RandomSource rng(2024);
    keys_ = new PaillierKeypair(keygen(256, rng));
  }
  static void TearDownTestSuite() {
    delete keys_;
    keys_ = nullptr;
  }
  const PaillierPublicKey& pk() const { return keys_->public_key; }
  const PaillierSecretKey& sk() const { return keys_->secret_key; }

  static PaillierKeypair* keys_;
  RandomSource rng_{99};
};

PaillierKeypair* PaillierTest::keys_ = nullptr;

TEST(KeygenTest, ToyKeyArithmetic) {
  auto kp = toy_35();
  EXPECT_EQ(kp.public_key.n, 35);
  EXPECT_EQ(kp.public_key.n_squared, 1225);
  EXPECT_EQ(kp.public_key.g, 36);
  EXPECT_EQ(kp.secret_key.lambda, 12);
  EXPECT_EQ(kp.public_key.max_number(), 17);
}

TEST(KeygenTest, RejectsBadSizesAndEqualPrimes) {
  RandomSource rng(1);
  EXPECT_THROW(keygen(7, rng), InvalidArgument);
  EXPECT_THROW(keygen(9, rng), InvalidArgument);
  EXPECT_THROW(keypair_from_primes(7, 7), InvalidArgument);
}

TEST(KeygenTest, SizesAndDistinctSeeds) {
  RandomSource a(1), b(2);
  for (std::size_t bits : {8u, 16u, 64u, 256u}) {
    auto kp = keygen(bits, a);
    EXPECT_EQ(bit_length(kp.public_key.n), bits);
    EXPECT_EQ(kp.secret_key.p * kp.secret_key.q, kp.public_key.n);
    EXPECT_NE(kp.secret_key.p, kp.secret_key.q);
  }
  EXPECT_NE(keygen(256, a).public_key.n, keygen(256, b).public_key.n);
}

TEST(KeygenTest, PrimalityAgreesWithGmp) {
  RandomSource rng(5);
  for (unsigned long x = 0; x < 3000; ++x) {
    BigInt n(x);
    EXPECT_EQ(is_probable_prime(n, rng),
              mpz_probab_prime_p(n.get_mpz_t(), 30) != 0)
        << x;
  }
  // Carmichael numbers.
  for (unsigned long x : {561ul, 1105ul, 1729ul, 2465ul, 2821ul, 6601ul}) {
    EXPECT_FALSE(is_probable_prime(BigInt(x), rng));
  }
}

TEST(KeygenTest, ToyKeyRoundtripsEveryPlaintext) {
  RandomSource rng(3);
  for (std::size_t bits : {8u, 16u}) {
    auto kp = keygen(bits, rng);
    for (int i = 0; i < 100; ++i) {
      BigInt m = rng.below(kp.public_key.n);
      EXPECT_EQ(decrypt(kp.secret_key, encrypt(kp.public_key, m, rng)), m);
    }
  }
}

TEST(EncryptTest, ToyKeyWorkedValues) {
  auto kp = toy_35();
  EXPECT_EQ(encrypt_with_nonce(kp.public_key, 0, 1).value, 1);
  // 36^3 * 2^35 mod 1225, computed independently.
  EXPECT_EQ(encrypt_with_nonce(kp.public_key, 3, 2).value, 683);
  EXPECT_EQ(decrypt(kp.secret_key, Ciphertext{1, 0}), 0);
  EXPECT_EQ(decrypt(kp.secret_key, Ciphertext{683, 0}), 3);
}

TEST(EncryptTest, RangeChecks) {
  auto kp = toy_35();
  RandomSource rng(1);
  EXPECT_THROW(encrypt(kp.public_key, 35, rng), InvalidArgument);
  EXPECT_THROW(encrypt(kp.public_key, -1, rng), InvalidArgument);
  EXPECT_THROW(encrypt_with_nonce(kp.public_key, 1, 5), InvalidArgument);
  EXPECT_THROW(decrypt(kp.secret_key, Ciphertext{1225, 0}), InvalidArgument);
  EXPECT_THROW(decrypt(kp.secret_key, Ciphertext{35, 0}), InvalidArgument);
  EXPECT_THROW(mul_plain(kp.public_key, Ciphertext{1, 0}, 35), InvalidArgument);
}

TEST_F(PaillierTest, BoundaryRoundtrips) {
  for (const BigInt& m : {BigInt(0), BigInt(1), BigInt(pk().n - 1)}) {
    EXPECT_EQ(decrypt(sk(), encrypt(pk(), m, rng_)), m);
  }
}

TEST_F(PaillierTest, RandomRoundtripsAndCrtAgreement) {
  for (int i = 0; i < 1000; ++i) {
    const BigInt m = rng_.below(pk().n);
    const Ciphertext c = encrypt(pk(), m, rng_);
    ASSERT_EQ(decrypt(sk(), c), m);
    if (i % 50 == 0) {
      EXPECT_EQ(decrypt_reference(sk(), c), m);
    }
  }
}

TEST_F(PaillierTest, SecretKeyEncryptionMatchesPublicRoute) {
  for (int i = 0; i < 50; ++i) {
    const BigInt r = rng_.below(pk().n - 1) + 1;
    EXPECT_EQ(nonce_power_crt(sk(), r),
              internal::powm(r, pk().n, pk().n_squared));
    const BigInt m = rng_.below(pk().n);
    EXPECT_EQ(decrypt(sk(), encrypt_with_secret(pk(), sk(), m, rng_)), m);
  }
}

TEST_F(PaillierTest, ProbabilisticEncryption) {
  for (int i = 0; i < 20; ++i) {
    const BigInt m = rng_.below(pk().n);
    EXPECT_NE(encrypt(pk(), m, rng_).value, encrypt(pk(), m, rng_).value);
  }
}

TEST_F(PaillierTest, HomomorphicOperations) {
  auto e = [&](const BigInt& m) { return encrypt(pk(), m, rng_); };
  EXPECT_EQ(decrypt(sk(), add_cipher(pk(), e(2), e(3))), 5);
  EXPECT_EQ(decrypt(sk(), add_plain(pk(), e(2), 3)), 5);
  EXPECT_EQ(decrypt(sk(), mul_plain(pk(), e(7), 3)), 21);
  const Ciphertext c = e(12345);
  EXPECT_EQ(decrypt(sk(), add_cipher(pk(), c, e(0))), 12345);
  EXPECT_EQ(decrypt(sk(), add_plain(pk(), c, 0)), 12345);
  EXPECT_EQ(decrypt(sk(), mul_plain(pk(), c, 1)), 12345);
  EXPECT_EQ(decrypt(sk(), mul_plain(pk(), c, pk().n - 1)), pk().n - 12345);
  EXPECT_EQ(decrypt(sk(), add_plain(pk(), c, 77)),
            decrypt(sk(), add_cipher(pk(), c, encrypt_with_nonce(pk(), 77, 1))));
  // Wraparound.
  EXPECT_EQ(decrypt(sk(), add_cipher(pk(), e(pk().n - 1), e(5))), 4);

  for (int i = 0; i < 100; ++i) {
    const BigInt a = rng_.below(pk().n), b = rng_.below(pk().n);
    EXPECT_EQ(decrypt(sk(), add_cipher(pk(), e(a), e(b))), (a + b) % pk().n);
    EXPECT_EQ(decrypt(sk(), add_plain(pk(), e(a), b)), (a + b) % pk().n);
    EXPECT_EQ(decrypt(sk(), mul_plain(pk(), e(a), b)), (a * b) % pk().n);
  }
}

TEST_F(PaillierTest, MixedExponentsRejected) {
  Ciphertext a = encrypt(pk(), 1, rng_, -40);
  Ciphertext b = encrypt(pk(), 1, rng_, -20);
  EXPECT_THROW(add_cipher(pk(), a, b), ExponentMismatch);
}

TEST(EncodingTest, WorkedValues) {
  // n = 77 (p = 7, q = 11), max_number = 38.
  auto pk = keypair_from_primes(7, 11).public_key;
  EXPECT_EQ(encode(1.5, -4, pk, 0).mantissa, 24);
  EXPECT_EQ(encode(-1.5, -4, pk, 0).mantissa, 53);
  EXPECT_EQ(encode(0.0, -4, pk, 0).mantissa, 0);
  EXPECT_EQ(encode(0.0, -40, keypair_from_primes(1000003, 1000033).public_key)
                .mantissa,
            0);
  EXPECT_EQ(decode({24, -4}, pk), 1.5);
  EXPECT_EQ(decode({53, -4}, pk), -1.5);
  // Band between the two ranges: [38, 39].
  EXPECT_THROW(decode({38, -4}, pk), DecodeError);
  EXPECT_THROW(decode({39, -4}, pk), DecodeError);
  EXPECT_EQ(decode({40, -4}, pk), -37.0 / 16);
  EXPECT_THROW(encode(2.5, -4, pk, 0), EncodingOverflow);
}

TEST(EncodingTest, HeadroomEnforced) {
  RandomSource rng(8);
  auto pk = keygen(128, rng).public_key;
  // 2^127 / 2^20 / 2^40 = 2^67 is roughly the largest encodable magnitude.
  EXPECT_NO_THROW(encode(std::ldexp(1.0, 60), -40, pk));
  EXPECT_THROW(encode(std::ldexp(1.0, 70), -40, pk), EncodingOverflow);
  EXPECT_THROW(encode(std::nan(""), -40, pk), InvalidArgument);
}

TEST_F(PaillierTest, EncodeDecodeWithinHalfUlp) {
  SplitMix64 gen(4);
  for (int i = 0; i < 1000; ++i) {
    const double x = (gen.uniform() - 0.5) * std::ldexp(1.0, 20);
    const int exponent = -static_cast<int>(gen.below(50));
    const double back = decode(encode(x, exponent, pk()), pk());
    EXPECT_LE(std::abs(back - x), std::ldexp(1.0, exponent) / 2);
  }
}

TEST_F(PaillierTest, EncryptedPipelineRoundtrip) {
  SplitMix64 gen(6);
  for (int i = 0; i < 200; ++i) {
    const double x = (gen.uniform() - 0.5) * 100;
    const Ciphertext c = encrypt_encoded(pk(), encode(x, -40, pk()), rng_);
    EXPECT_EQ(c.exponent, -40);
    const EncodedNumber back = decrypt_encoded(sk(), c);
    EXPECT_EQ(back.exponent, -40);
    EXPECT_LE(std::abs(decode(back, pk()) - x), std::ldexp(1.0, -41));
  }
}

TEST_F(PaillierTest, SignedFixedPointArithmeticIsExact) {
  const Ciphertext a = encrypt_encoded(pk(), encode(1.5, -4, pk()), rng_);
  const Ciphertext b = encrypt_encoded(pk(), encode(-0.5, -4, pk()), rng_);
  EXPECT_EQ(decode(decrypt_encoded(sk(), add_cipher(pk(), a, b)), pk()), 1.0);

  SplitMix64 gen(7);
  for (int i = 0; i < 200; ++i) {
    // Values already on the 2^-40 grid add and subtract exactly.
    const double x = std::ldexp(std::round((gen.uniform() - 0.5) * 0x1p50), -40);
    const double y = std::ldexp(std::round((gen.uniform() - 0.5) * 0x1p50), -40);
    const Ciphertext cx = encrypt_encoded(pk(), encode(x, -40, pk()), rng_);
    const Ciphertext cy = encrypt_encoded(pk(), encode(y, -40, pk()), rng_);
    EXPECT_EQ(decode(decrypt_encoded(sk(), add_cipher(pk(), cx, cy)), pk()),
              x + y);
    EXPECT_EQ(decode(decrypt_encoded(sk(), subtract(pk(), cx, cy)), pk()),
              x - y);
  }
}

TEST_F(PaillierTest, HexSerialization) {
  const Ciphertext c = encrypt(pk(), 42, rng_);
  const std::string hex = to_hex(c.value);
  for (char ch : hex) EXPECT_TRUE(std::islower(ch) || std::isdigit(ch));
  EXPECT_EQ(from_hex(hex), c.value);
  EXPECT_THROW(from_hex("12G"), FormatError);
  EXPECT_THROW(from_hex("ABC"), FormatError);
  EXPECT_THROW(from_hex(""), FormatError);
}

TEST(PaillierLargeKeyTest, SpotCheck1024) {
  RandomSource rng(77);
  auto kp = keygen(1024, rng);
  EXPECT_EQ(bit_length(kp.public_key.n), 1024u);
  for (int i = 0; i < 10; ++i) {
    const BigInt a = rng.below(kp.public_key.n), b = rng.below(kp.public_key.n);
    EXPECT_EQ(decrypt(kp.secret_key,
                      add_cipher(kp.public_key, encrypt(kp.public_key, a, rng),
                                 encrypt(kp.public_key, b, rng))),
              (a + b) % kp.public_key.n);
  }
}

}  // namespace
}  // namespace fedmf
