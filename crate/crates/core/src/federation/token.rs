//! Cross-border phone tokens. A federation that observes contacts of a
//! phone registered abroad seals the phone identity under the home
//! country's public key; only that country's quorum can open it.

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use x25519_dalek::{PublicKey, StaticSecret};

use crate::crypto::{hex_bytes, open, seal};
use crate::pdr::{PhoneId, Point2};
use crate::wire::{Reader, Writer};

use super::request::MinuteRange;
use super::shamir::{reconstruct_secret, Share};
use super::FederationError;

/// Space-time envelope of the contacts that triggered the token.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenContext {
    pub window: MinuteRange,
    pub center: Point2,
    pub radius_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossBorderToken {
    #[serde(with = "hex_bytes")]
    pub ciphertext: Vec<u8>,
    pub home_country: String,
    pub context: TokenContext,
}

fn aad(country: &str, ctx: &TokenContext) -> Vec<u8> {
    let mut w = Writer::new();
    w.raw(b"epitrace/token/v1")
        .str(country)
        .u64(ctx.window.start)
        .u64(ctx.window.end)
        .f64(ctx.center.x)
        .f64(ctx.center.y)
        .f64(ctx.radius_m);
    w.finish()
}

pub fn issue_token<R: RngCore + CryptoRng>(
    phone: &PhoneId,
    home_pubkey: &PublicKey,
    home_country: &str,
    context: TokenContext,
    rng: &mut R,
) -> Result<CrossBorderToken, FederationError> {
    let mut w = Writer::new();
    phone.encode_into(&mut w);
    let ciphertext = seal(
        home_pubkey,
        &w.finish(),
        &aad(home_country, &context),
        rng,
    )
    .map_err(|_| FederationError::TokenRedeem)?;
    Ok(CrossBorderToken {
        ciphertext,
        home_country: home_country.to_owned(),
        context,
    })
}

/// Opens a token from shares of the home key. Too few shares, shares of
/// another federation's key, or a modified context all fail authentication.
pub fn redeem_token(token: &CrossBorderToken, shares: &[Share]) -> Result<PhoneId, FederationError> {
    let secret = reconstruct_secret(shares)?;
    let bytes: [u8; 32] = secret
        .try_into()
        .map_err(|_| FederationError::TokenRedeem)?;
    open_token(token, &StaticSecret::from(bytes))
}

pub fn open_token(token: &CrossBorderToken, key: &StaticSecret) -> Result<PhoneId, FederationError> {
    let plain = open(
        key,
        &token.ciphertext,
        &aad(&token.home_country, &token.context),
    )
    .map_err(|_| FederationError::TokenRedeem)?;
    let mut r = Reader::new(&plain);
    let phone = PhoneId::decode_from(&mut r).map_err(|_| FederationError::TokenRedeem)?;
    r.finish().map_err(|_| FederationError::TokenRedeem)?;
    Ok(phone)
}
