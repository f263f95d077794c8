use kpuf::cipher::{capacity, decrypt, encrypt, encrypt_with, Ciphertext};
use kpuf::digest::seeded_trn;
use kpuf::{Error, PufImage, PufImage32};
use proptest::prelude::*;
use std::sync::OnceLock;

fn image() -> &'static PufImage {
    static IMG: OnceLock<PufImage> = OnceLock::new();
    IMG.get_or_init(|| PufImage::generate(2024))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn encrypt_then_decrypt(msg in proptest::collection::vec(any::<u8>(), 0..=963),
                            pw in proptest::collection::vec(any::<u8>(), 64),
                            seed in any::<u64>()) {
        let trn = seeded_trn(seed, 0);
        let ct = encrypt(&msg, &pw, &trn, image()).unwrap();
        prop_assert_eq!(ct.symbols.len(), 2 * msg.len());
        prop_assert_eq!(decrypt(&ct, &pw, image()).unwrap(), msg.clone());
        let again = Ciphertext::from_bytes(&ct.to_bytes()).unwrap();
        prop_assert_eq!(&again, &ct);
        prop_assert_eq!(Ciphertext::from_hex(&ct.to_hex()).unwrap(), ct);
    }

    #[test]
    fn flipped_symbol_is_detected(msg in proptest::collection::vec(any::<u8>(), 1..=240),
                                  pos in any::<prop::sample::Index>(),
                                  bit in 0u32..16) {
        let pw = [9u8; 64];
        let mut ct = encrypt(&msg, &pw, &seeded_trn(1, 1), image()).unwrap();
        let i = pos.index(ct.symbols.len());
        ct.symbols[i] ^= 1 << bit;
        match decrypt(&ct, &pw, image()) {
            Err(Error::Tamper { .. }) | Err(Error::Decodability { .. }) => {}
            Ok(pt) => prop_assert_ne!(pt, msg),
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }
}

#[test]
fn wrong_password_does_not_decrypt() {
    let msg = b"attack at dawn".to_vec();
    let ct = encrypt(&msg, &[1u8; 64], &seeded_trn(3, 3), image()).unwrap();
    assert_ne!(decrypt(&ct, &[2u8; 64], image()).ok(), Some(msg));
}

#[test]
fn mismatched_image_does_not_decrypt() {
    let msg = b"attack at dawn".to_vec();
    let ct = encrypt(&msg, &[1u8; 64], &seeded_trn(3, 3), image()).unwrap();
    let other = PufImage::generate(2025);
    assert_ne!(decrypt(&ct, &[1u8; 64], &other).ok(), Some(msg));
}

#[test]
fn capacity_boundaries() {
    let pw = [4u8; 64];
    for r in [16u16, 32, 64] {
        let cap = capacity(r);
        let fits = vec![b'x'; cap];
        assert!(encrypt_with(&fits, &pw, &seeded_trn(0, 0), image(), Some(r), |_, _| {}).is_ok());
        let over = vec![b'x'; cap + 1];
        let err = encrypt_with(&over, &pw, &seeded_trn(0, 0), image(), Some(r), |_, _| {}).unwrap_err();
        assert!(matches!(err, Error::Capacity { .. }));
    }
    assert!(matches!(encrypt(&vec![0u8; 964], &pw, &seeded_trn(0, 0), image()), Err(Error::Capacity { .. })));
}

#[test]
fn image_survives_save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("puf.csv");
    image().save(&path).unwrap();
    let loaded = PufImage::load(&path).unwrap();
    assert_eq!(loaded.resistances(), image().resistances());
    assert_eq!(loaded.seed(), image().seed());
}

#[test]
fn single_precision_image_round_trips() {
    let img = PufImage32::generate(77);
    assert!(img.validate_decodability().is_empty());
    let msg = b"single precision".to_vec();
    let ct = encrypt(&msg, &[5u8; 64], &seeded_trn(5, 5), &img).unwrap();
    assert_eq!(decrypt(&ct, &[5u8; 64], &img).unwrap(), msg);
}
