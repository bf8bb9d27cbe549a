use crate::federation::{
    AuthorityId, Capability, Federation, MinuteRange, OperationClass, Payload, QuorumCertificate,
    SystemState, SystemStateKind,
};
use crate::mobility::{FederationParams, ProviderId, ProviderRegistry, StationInfo};
use crate::pdr::{make_pdr, BsCode, Minute, Pdr, PhoneId, Point2, PrecisionClass, ProxVector};

pub struct Rig {
    pub fed: Federation,
}

impl Rig {
    pub fn alert() -> Self {
        let mut rig = Self {
            fed: Federation::new("cep", FederationParams::default().policy(), 60, 3).unwrap(),
        };
        let up = rig.certify(
            OperationClass::LockUnlock,
            Payload::StateChange {
                target: SystemStateKind::Alert,
            },
        );
        rig.fed
            .change_state(&up, SystemStateKind::Alert, 0, &mut [])
            .unwrap();
        rig
    }

    pub fn certify(&mut self, class: OperationClass, payload: Payload) -> QuorumCertificate {
        let id = self.fed.request(AuthorityId(1), class, payload, 0).unwrap();
        let all: Vec<AuthorityId> = (1..=7).map(AuthorityId).collect();
        self.fed.collect(id, &all, 0).unwrap()
    }

    pub fn cap(&mut self, class: OperationClass) -> Capability {
        let scope = MinuteRange::new(0, 100_000);
        let payload = match class {
            OperationClass::LockUnlock => Payload::StateChange {
                target: SystemStateKind::Passive,
            },
            OperationClass::StrictPush => Payload::Push { scope },
            OperationClass::BlindAnalysis | OperationClass::BlindProcessing => Payload::Analysis {
                scope,
                subjects: vec![],
            },
            OperationClass::FullProcessing => Payload::Disclosure {
                scope,
                subjects: vec![],
                key_ids: vec![],
            },
        };
        let cert = self.certify(class, payload);
        self.fed.authorize_mode(&cert, class, 0).unwrap()
    }

    pub fn state(&self) -> SystemState {
        self.fed.state()
    }
}

pub fn phone(i: u32) -> PhoneId {
    PhoneId::new(format!("352{i:06}"), format!("{:015}", 350_000_000_000_000u64 + u64::from(i)))
        .unwrap()
}

/// One macro cell over everything, two overlapping femto cells at venue 0
/// and a far pico cell at venue 1.
pub struct Layout {
    pub registry: ProviderRegistry,
    pub macro_cell: BsCode,
    pub femto_a: BsCode,
}

impl Layout {
    pub fn new() -> Self {
        let key = [7u8; 32];
        let mut registry = ProviderRegistry::default();
        let mut add = |i: u32, class, centroid, range, venue| {
            let code = BsCode::derive(&key, 1 + (i % 2) as u16, i, class);
            registry.insert(StationInfo {
                code,
                provider: ProviderId(1 + (i % 2) as u16),
                centroid,
                useful_range: range,
                venue,
            });
            code
        };
        let macro_cell = add(0, PrecisionClass::Macro, Point2::new(500.0, 500.0), 3000.0, None);
        let femto_a = add(1, PrecisionClass::Femto, Point2::new(100.0, 100.0), 5.0, Some(0));
        add(2, PrecisionClass::Femto, Point2::new(104.0, 100.0), 5.0, Some(0));
        add(3, PrecisionClass::Pico, Point2::new(900.0, 900.0), 40.0, Some(1));
        Self {
            registry,
            macro_cell,
            femto_a,
        }
    }

    /// Noise-free reading of `p` at absolute `pos` from station `bs`.
    pub fn pdr(&self, bs: BsCode, who: &PhoneId, pos: Point2, minute: Minute) -> Pdr {
        let c = self.registry.resolve(&bs.code).unwrap().centroid;
        make_pdr(
            bs,
            who.clone(),
            ProxVector::from_offset(pos.x - c.x, pos.y - c.y),
            minute,
        )
    }

    /// Readings from every station whose range covers `pos`.
    pub fn observe(&self, who: &PhoneId, pos: Point2, minute: Minute) -> Vec<Pdr> {
        self.registry
            .stations()
            .filter(|s| s.centroid.distance(&pos) <= s.useful_range)
            .map(|s| self.pdr(s.code, who, pos, minute))
            .collect()
    }
}
