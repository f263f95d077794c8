//! Keccak-f[1600] permutation and the SHA3-512 hash (FIPS 202).

use zeroize::Zeroize;

const ROUND_CONSTANTS: [u64; 24] = [
    0x0000_0000_0000_0001,
    0x0000_0000_0000_8082,
    0x8000_0000_0000_808A,
    0x8000_0000_8000_8000,
    0x0000_0000_0000_808B,
    0x0000_0000_8000_0001,
    0x8000_0000_8000_8081,
    0x8000_0000_0000_8009,
    0x0000_0000_0000_008A,
    0x0000_0000_0000_0088,
    0x0000_0000_8000_8009,
    0x0000_0000_8000_000A,
    0x0000_0000_8000_808B,
    0x8000_0000_0000_008B,
    0x8000_0000_0000_8089,
    0x8000_0000_0000_8003,
    0x8000_0000_0000_8002,
    0x8000_0000_0000_0080,
    0x0000_0000_0000_800A,
    0x8000_0000_8000_000A,
    0x8000_0000_8000_8081,
    0x8000_0000_0000_8080,
    0x0000_0000_8000_0001,
    0x8000_0000_8000_8008,
];

// rho offsets and pi lane order, walked along the pi cycle starting at lane 1
const RHO: [u32; 24] = [
    1, 3, 6, 10, 15, 21, 28, 36, 45, 55, 2, 14, 27, 41, 56, 8, 25, 43, 62, 18, 39, 61, 20, 44,
];
const PI: [usize; 24] = [
    10, 7, 11, 17, 18, 3, 5, 16, 8, 21, 24, 4, 15, 23, 19, 13, 12, 2, 20, 14, 22, 9, 6, 1,
];

/// The 24-round Keccak-f[1600] permutation. Lane `x + 5y` is `state[x + 5 * y]`.
pub fn keccak_f1600(state: &mut [u64; 25]) {
    for rc in ROUND_CONSTANTS {
        // theta
        let mut c = [0u64; 5];
        for x in 0..5 {
            c[x] = state[x] ^ state[x + 5] ^ state[x + 10] ^ state[x + 15] ^ state[x + 20];
        }
        for x in 0..5 {
            let d = c[(x + 4) % 5] ^ c[(x + 1) % 5].rotate_left(1);
            for y in 0..5 {
                state[x + 5 * y] ^= d;
            }
        }
        // rho + pi
        let mut last = state[1];
        for (&dst, &rot) in PI.iter().zip(RHO.iter()) {
            let tmp = state[dst];
            state[dst] = last.rotate_left(rot);
            last = tmp;
        }
        // chi
        for y in 0..5 {
            let row = [
                state[5 * y],
                state[5 * y + 1],
                state[5 * y + 2],
                state[5 * y + 3],
                state[5 * y + 4],
            ];
            for x in 0..5 {
                state[5 * y + x] = row[x] ^ (!row[(x + 1) % 5] & row[(x + 2) % 5]);
            }
        }
        // iota
        state[0] ^= rc;
    }
}

const SHA3_512_RATE: usize = 72;
pub const SHA3_512_LEN: usize = 64;

/// Incremental SHA3-512.
#[derive(Clone)]
pub struct Sha3_512 {
    state: [u64; 25],
    buf: [u8; SHA3_512_RATE],
    buf_len: usize,
}

impl Default for Sha3_512 {
    fn default() -> Self {
        Self::new()
    }
}

impl Sha3_512 {
    pub fn new() -> Self {
        Self {
            state: [0; 25],
            buf: [0; SHA3_512_RATE],
            buf_len: 0,
        }
    }

    pub fn update(&mut self, mut data: &[u8]) {
        while !data.is_empty() {
            let take = (SHA3_512_RATE - self.buf_len).min(data.len());
            self.buf[self.buf_len..self.buf_len + take].copy_from_slice(&data[..take]);
            self.buf_len += take;
            data = &data[take..];
            if self.buf_len == SHA3_512_RATE {
                self.absorb_block();
            }
        }
    }

    fn absorb_block(&mut self) {
        for (lane, chunk) in self.state.iter_mut().zip(self.buf.chunks_exact(8)) {
            *lane ^= u64::from_le_bytes(chunk.try_into().unwrap());
        }
        keccak_f1600(&mut self.state);
        self.buf_len = 0;
    }

    pub fn finalize(mut self) -> [u8; SHA3_512_LEN] {
        // SHA-3 domain separation bits 01, then pad10*1
        self.buf[self.buf_len..].fill(0);
        self.buf[self.buf_len] ^= 0x06;
        self.buf[SHA3_512_RATE - 1] ^= 0x80;
        self.absorb_block();
        let mut out = [0u8; SHA3_512_LEN];
        for (chunk, lane) in out.chunks_exact_mut(8).zip(self.state.iter()) {
            chunk.copy_from_slice(&lane.to_le_bytes());
        }
        out
    }

    pub fn digest(data: &[u8]) -> [u8; SHA3_512_LEN] {
        let mut h = Self::new();
        h.update(data);
        h.finalize()
    }
}

impl Drop for Sha3_512 {
    fn drop(&mut self) {
        self.state.zeroize();
        self.buf.zeroize();
    }
}

/// A published SHA3-512 known-answer vector.
pub struct KnownAnswer {
    pub name: &'static str,
    pub message: fn() -> Vec<u8>,
    pub digest_hex: &'static str,
}

/// FIPS 202 example vectors (empty string, "abc", the 448-bit two-block
/// alphabet string, and 200 repetitions of 0xA3).
pub const KNOWN_ANSWERS: [KnownAnswer; 4] = [
    KnownAnswer {
        name: "empty",
        message: Vec::new,
        digest_hex: "a69f73cca23a9ac5c8b567dc185a756e97c982164fe25859e0d1dcc1475c80a6\
                     15b2123af1f5f94c11e3e9402c3ac558f500199d95b6d3e301758586281dcd26",
    },
    KnownAnswer {
        name: "abc",
        message: || b"abc".to_vec(),
        digest_hex: "b751850b1a57168a5693cd924b6b096e08f621827444f70d884f5d0240d2712e\
                     10e116e9192af3c91a7ec57647e3934057340b4cf408d5a56592f8274eec53f0",
    },
    KnownAnswer {
        name: "abcdbcde...nopq",
        message: || b"abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq".to_vec(),
        digest_hex: "04a371e84ecfb5b8b77cb48610fca8182dd457ce6f326a0fd3d7ec2f1e91636d\
                     ee691fbe0c985302ba1b0d8dc78c086346b533b49c030d99a27daf1139d6e75e",
    },
    KnownAnswer {
        name: "0xA3 x 200",
        message: || vec![0xA3; 200],
        digest_hex: "e76dfad22084a8b1467fcf2ffa58361bec7628edf5f3fdc0e4805dc48caeeca8\
                     1b7c13c30adf52a3659584739a2df46be589c51ca1a4a8416df6545a1ce8ba00",
    },
];

/// Runs every known-answer vector; returns the names of the ones that failed.
pub fn run_known_answers() -> Vec<&'static str> {
    KNOWN_ANSWERS
        .iter()
        .filter(|kat| hex::encode(Sha3_512::digest(&(kat.message)())) != kat.digest_hex)
        .map(|kat| kat.name)
        .collect()
}
