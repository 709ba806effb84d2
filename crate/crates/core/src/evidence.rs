//! Elements, claims and the ambient context.
//!
//! A claim is the evidence triple (measurement, signature, identifier)
//! grounded to exactly one element. Measurements and signatures each admit a
//! null value, so a claim always exists even when a mechanism cannot run:
//! degraded evidence is expressed in-band rather than as an exception.
//!
//! Cryptography is symbolic. A signature is valid when the context's key
//! registry maps its key reference to the claim's grounded element and its
//! payload digest equals the SHA-256 of the canonical measurement encoding.
//! The null measurement encodes as the empty byte string, so a bare token
//! signature carries the well-known empty digest.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Slot holding the element's attestation-key reference; never measured.
pub const AK_REF_SLOT: &str = "ak_ref";
/// Slot holding the element's serial identity string.
pub const SERIAL_SLOT: &str = "serial";
/// Slots with this prefix are private key material; never measured.
pub const PRIVATE_SLOT_PREFIX: &str = "ek_";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ElementId(pub String);

impl ElementId {
    pub fn new(id: impl Into<String>) -> Self {
        ElementId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ElementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ElementId {
    fn from(s: &str) -> Self {
        ElementId(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MechanismId(pub String);

impl MechanismId {
    pub fn new(id: impl Into<String>) -> Self {
        MechanismId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for MechanismId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for MechanismId {
    fn from(s: &str) -> Self {
        MechanismId(s.to_string())
    }
}

/// How long a state slot survives lifecycle transitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Persistence {
    /// Survives restart and power cycle (flash, fused identity).
    Persistent,
    /// Survives restart, cleared by a power cycle.
    RestartSurvivable,
    /// Cleared by restart and power cycle.
    Volatile,
}

/// A device or system under attestation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Element {
    pub id: ElementId,
    /// False models the pre-boot / powered-off state: attestation of such an
    /// element yields the null claim.
    pub attestable: bool,
    pub capabilities: BTreeSet<MechanismId>,
    /// Slot name to raw bytes.
    #[serde(with = "state_hex")]
    pub state: BTreeMap<String, Vec<u8>>,
    /// Persistence class per slot; unlisted slots are persistent.
    #[serde(default)]
    pub persistence: BTreeMap<String, Persistence>,
    /// Sub-elements for composition; no duplicates, never the element itself.
    #[serde(default)]
    pub children: Vec<ElementId>,
}

mod state_hex {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<String, Vec<u8>>,
        ser: S,
    ) -> Result<S::Ok, S::Error> {
        let hexed: BTreeMap<&str, String> = map
            .iter()
            .map(|(k, v)| (k.as_str(), hex::encode(v)))
            .collect();
        hexed.serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        de: D,
    ) -> Result<BTreeMap<String, Vec<u8>>, D::Error> {
        let hexed: BTreeMap<String, String> = BTreeMap::deserialize(de)?;
        hexed
            .into_iter()
            .map(|(k, v)| Ok((k, hex::decode(v).map_err(serde::de::Error::custom)?)))
            .collect()
    }
}

impl Element {
    pub fn new(id: impl Into<String>) -> Self {
        Element {
            id: ElementId::new(id),
            attestable: true,
            capabilities: BTreeSet::new(),
            state: BTreeMap::new(),
            persistence: BTreeMap::new(),
            children: Vec::new(),
        }
    }

    pub fn with_capability(mut self, mech: impl Into<String>) -> Self {
        self.capabilities.insert(MechanismId::new(mech));
        self
    }

    pub fn with_slot(mut self, name: impl Into<String>, value: impl Into<Vec<u8>>) -> Self {
        self.state.insert(name.into(), value.into());
        self
    }

    pub fn with_slot_persistence(mut self, name: impl Into<String>, p: Persistence) -> Self {
        self.persistence.insert(name.into(), p);
        self
    }

    pub fn with_child(mut self, id: impl Into<String>) -> Self {
        self.children.push(ElementId::new(id));
        self
    }

    pub fn unattestable(mut self) -> Self {
        self.attestable = false;
        self
    }

    pub fn slot_persistence(&self, slot: &str) -> Persistence {
        self.persistence
            .get(slot)
            .copied()
            .unwrap_or(Persistence::Persistent)
    }

    /// Key reference this element signs with, if it holds one.
    pub fn ak_ref(&self) -> Option<String> {
        self.state
            .get(AK_REF_SLOT)
            .map(|raw| String::from_utf8_lossy(raw).into_owned())
    }
}

/// Integrity measurements; the null value is a first-class citizen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Measurement {
    NullM,
    Values {
        #[serde(with = "state_hex")]
        registers: BTreeMap<String, Vec<u8>>,
    },
}

impl Measurement {
    pub fn is_null(&self) -> bool {
        matches!(self, Measurement::NullM)
    }

    pub fn values(registers: BTreeMap<String, Vec<u8>>) -> Self {
        if registers.is_empty() {
            Measurement::NullM
        } else {
            Measurement::Values { registers }
        }
    }

    /// Canonical byte encoding used for signature payloads: sorted
    /// `name=hex\n` lines; the null measurement encodes as the empty string.
    pub fn canonical_encoding(&self) -> Vec<u8> {
        match self {
            Measurement::NullM => Vec::new(),
            Measurement::Values { registers } => {
                let mut out = Vec::new();
                for (name, value) in registers {
                    out.extend_from_slice(name.as_bytes());
                    out.push(b'=');
                    out.extend_from_slice(hex::encode(value).as_bytes());
                    out.push(b'\n');
                }
                out
            }
        }
    }

    pub fn digest(&self) -> Vec<u8> {
        Sha256::digest(self.canonical_encoding()).to_vec()
    }
}

/// Symbolic cryptographic binding of a claim to a key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Signature {
    NullS,
    Sig {
        key_ref: String,
        #[serde(with = "hex::serde")]
        payload_digest: Vec<u8>,
        #[serde(with = "hex::serde")]
        nonce: Vec<u8>,
    },
}

impl Signature {
    pub fn is_null(&self) -> bool {
        matches!(self, Signature::NullS)
    }
}

/// Unique identifier of one claim instance: a fresh nonce plus the logical
/// clock at mint time.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClaimId {
    #[serde(with = "hex::serde")]
    pub nonce: Vec<u8>,
    pub timestamp: u64,
}

/// Evidence about one element: measurement × signature × identifier, grounded
/// to the element it was taken from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub measurement: Measurement,
    pub signature: Signature,
    pub claim_id: ClaimId,
    pub grounded_to: ElementId,
    pub mechanism: MechanismId,
}

impl Claim {
    /// Projection to the measurement.
    pub fn ameas(&self) -> &Measurement {
        &self.measurement
    }

    /// Projection to the signature.
    pub fn asig(&self) -> &Signature {
        &self.signature
    }

    /// Projection to the identifier.
    pub fn aid(&self) -> &ClaimId {
        &self.claim_id
    }
}

/// Grounding projection: the element a claim was taken from, independent of
/// which mechanism produced it.
pub fn ground(claim: &Claim) -> &ElementId {
    &claim.grounded_to
}

/// True only for the fully null claim (no measurement and no signature).
pub fn chi_null(claim: &Claim) -> bool {
    claim.measurement.is_null() && claim.signature.is_null()
}

/// The ambient context: expectations, key registry, novelty, freshness
/// nonces, counters and persisted state. Mutated by attestation (nonce mint),
/// verification (nonce consumption) and lifecycle steps (counters, persisted
/// slots); everything else treats it read-only.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Context {
    /// Trusted reference values: element to expected register map.
    #[serde(default)]
    pub expectations: BTreeMap<ElementId, BTreeMap<String, Vec<u8>>>,
    /// Valid signing keys: key reference to the element it identifies.
    #[serde(default)]
    pub key_registry: BTreeMap<String, ElementId>,
    /// Elements we have seen before; absence means "new".
    #[serde(default)]
    pub known_elements: BTreeSet<ElementId>,
    /// Issued and not yet consumed nonces.
    #[serde(default)]
    pub nonce_registry: BTreeSet<Vec<u8>>,
    /// Logical tick counter advanced by the scenario runner.
    #[serde(default)]
    pub clock: u64,
    #[serde(default)]
    pub reset_counter: BTreeMap<ElementId, u64>,
    #[serde(default)]
    pub restart_counter: BTreeMap<ElementId, u64>,
    /// Free-form metadata consulted by context guards.
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    /// Element state that survives power cycles (written at power-off).
    #[serde(default)]
    pub persisted: BTreeMap<ElementId, BTreeMap<String, Vec<u8>>>,
    /// Monotone source for nonce minting.
    #[serde(default)]
    nonce_seq: u64,
}

impl Context {
    pub fn new() -> Self {
        Context::default()
    }

    /// Mint a claim identifier with a fresh nonce, registering the nonce as
    /// issued-and-unconsumed.
    pub fn mint_claim_id(&mut self) -> ClaimId {
        self.nonce_seq += 1;
        let mut nonce = Vec::with_capacity(16);
        nonce.extend_from_slice(&self.clock.to_be_bytes());
        nonce.extend_from_slice(&self.nonce_seq.to_be_bytes());
        self.nonce_registry.insert(nonce.clone());
        ClaimId {
            nonce,
            timestamp: self.clock,
        }
    }

    /// Register an externally supplied nonce (wire flow: the verifier mints,
    /// the agent echoes).
    pub fn register_nonce(&mut self, nonce: &[u8]) {
        self.nonce_registry.insert(nonce.to_vec());
    }

    /// Consume a nonce; returns whether it was present (fresh).
    pub fn consume_nonce(&mut self, nonce: &[u8]) -> bool {
        self.nonce_registry.remove(nonce)
    }

    pub fn is_known(&self, element: &ElementId) -> bool {
        self.known_elements.contains(element)
    }
}

/// What a mechanism reads from element state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotSelector {
    /// All integrity slots: everything except the serial and key slots.
    Integrity,
    /// Only the serial identity slot.
    SerialOnly,
    /// Nothing; the mechanism produces a bare token.
    None,
}

/// An attestation mechanism: what it measures and whether it signs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mechanism {
    pub id: MechanismId,
    pub reads: SlotSelector,
    pub signs: bool,
}

/// The built-in mechanism library, spanning all four quadrants of the
/// measurement × signature product.
pub fn builtin_mechanisms() -> Vec<Mechanism> {
    vec![
        Mechanism {
            id: MechanismId::new("quote"),
            reads: SlotSelector::Integrity,
            signs: true,
        },
        Mechanism {
            id: MechanismId::new("measure_only"),
            reads: SlotSelector::Integrity,
            signs: false,
        },
        Mechanism {
            id: MechanismId::new("token_only"),
            reads: SlotSelector::None,
            signs: true,
        },
        Mechanism {
            id: MechanismId::new("serial_read"),
            reads: SlotSelector::SerialOnly,
            signs: false,
        },
    ]
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum EvidenceError {
    #[error("unknown element `{0}`")]
    UnknownElement(ElementId),
    #[error("unknown mechanism `{0}`")]
    UnknownMechanism(MechanismId),
    #[error("element `{element}` lists unregistered capability `{capability}`")]
    UnknownCapability {
        element: ElementId,
        capability: MechanismId,
    },
    #[error("element `{element}` has invalid children: {reason}")]
    InvalidChildren { element: ElementId, reason: String },
}

/// The attestation substrate: elements plus the mechanism registry.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct World {
    pub elements: BTreeMap<ElementId, Element>,
    pub mechanisms: BTreeMap<MechanismId, Mechanism>,
}

impl World {
    /// Empty world with the built-in mechanism library registered.
    pub fn new() -> Self {
        let mut world = World::default();
        for mech in builtin_mechanisms() {
            world.mechanisms.insert(mech.id.clone(), mech);
        }
        world
    }

    pub fn insert_element(&mut self, element: Element) -> Result<(), EvidenceError> {
        for cap in &element.capabilities {
            if !self.mechanisms.contains_key(cap) {
                return Err(EvidenceError::UnknownCapability {
                    element: element.id.clone(),
                    capability: cap.clone(),
                });
            }
        }
        let mut seen = BTreeSet::new();
        for child in &element.children {
            if child == &element.id {
                return Err(EvidenceError::InvalidChildren {
                    element: element.id.clone(),
                    reason: "element lists itself as a child".into(),
                });
            }
            if !seen.insert(child.clone()) {
                return Err(EvidenceError::InvalidChildren {
                    element: element.id.clone(),
                    reason: format!("duplicate child `{child}`"),
                });
            }
        }
        self.elements.insert(element.id.clone(), element);
        Ok(())
    }

    pub fn element(&self, id: &ElementId) -> Result<&Element, EvidenceError> {
        self.elements
            .get(id)
            .ok_or_else(|| EvidenceError::UnknownElement(id.clone()))
    }

    pub fn mechanism(&self, id: &MechanismId) -> Result<&Mechanism, EvidenceError> {
        self.mechanisms
            .get(id)
            .ok_or_else(|| EvidenceError::UnknownMechanism(id.clone()))
    }
}

fn measured_registers(element: &Element, selector: SlotSelector) -> BTreeMap<String, Vec<u8>> {
    match selector {
        SlotSelector::Integrity => element
            .state
            .iter()
            .filter(|(name, _)| {
                name.as_str() != AK_REF_SLOT
                    && name.as_str() != SERIAL_SLOT
                    && !name.starts_with(PRIVATE_SLOT_PREFIX)
            })
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect(),
        SlotSelector::SerialOnly => element
            .state
            .get(SERIAL_SLOT)
            .map(|v| {
                let mut m = BTreeMap::new();
                m.insert(SERIAL_SLOT.to_string(), v.clone());
                m
            })
            .unwrap_or_default(),
        SlotSelector::None => BTreeMap::new(),
    }
}

/// Produce a claim for the element using the given, already minted claim id.
/// Total over registered inputs: an element that cannot satisfy the mechanism
/// yields the null claim, still grounded to the element.
pub fn attest_claim(
    world: &World,
    element_id: &ElementId,
    mechanism_id: &MechanismId,
    claim_id: ClaimId,
) -> Result<Claim, EvidenceError> {
    let element = world.element(element_id)?;
    let mechanism = world.mechanism(mechanism_id)?;

    let capable = element.attestable && element.capabilities.contains(mechanism_id);
    if !capable {
        return Ok(Claim {
            measurement: Measurement::NullM,
            signature: Signature::NullS,
            claim_id,
            grounded_to: element_id.clone(),
            mechanism: mechanism_id.clone(),
        });
    }

    let measurement = Measurement::values(measured_registers(element, mechanism.reads));
    let signature = if mechanism.signs {
        match element.ak_ref() {
            Some(key_ref) => Signature::Sig {
                key_ref,
                payload_digest: measurement.digest(),
                nonce: claim_id.nonce.clone(),
            },
            // No key material: evidence degrades to unsigned, in-band.
            None => Signature::NullS,
        }
    } else {
        Signature::NullS
    };

    Ok(Claim {
        measurement,
        signature,
        claim_id,
        grounded_to: element_id.clone(),
        mechanism: mechanism_id.clone(),
    })
}

/// Attest with a freshly minted claim id: the in-process path. Atomic;
/// read-only on the element, write-only on the nonce registry.
pub fn attest(
    world: &World,
    element_id: &ElementId,
    mechanism_id: &MechanismId,
    ctx: &mut Context,
) -> Result<Claim, EvidenceError> {
    // Validate names before minting so failed lookups leave no trace.
    world.element(element_id)?;
    world.mechanism(mechanism_id)?;
    let claim_id = ctx.mint_claim_id();
    attest_claim(world, element_id, mechanism_id, claim_id)
}
