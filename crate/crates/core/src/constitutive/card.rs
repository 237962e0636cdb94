use serde::{Deserialize, Serialize};

use super::{ConstitutiveError, OgdenMaterial, PlasticMaterial};

/// Bundled card for the third-order Ogden rubber.
pub const TABLE1_CARD: &str = include_str!("../../data/table1.json");
/// Bundled card for the elastoplastic aluminum.
pub const TABLE2_CARD: &str = include_str!("../../data/table2.json");

#[derive(Debug, Clone, PartialEq)]
pub enum Material {
    Ogden(OgdenMaterial),
    Elastoplastic(PlasticMaterial),
}

impl Material {
    pub fn validate(&self) -> Result<(), ConstitutiveError> {
        match self {
            Material::Ogden(m) => m.validate(),
            Material::Elastoplastic(m) => m.validate(),
        }
    }
}

/// Named material definition as stored in a JSON card.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialCard {
    pub name: String,
    pub material: Material,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum CardType {
    Ogden,
    Elastoplastic,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCard {
    name: String,
    #[serde(rename = "type")]
    kind: CardType,
    parameters: serde_json::Map<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hardening: Option<Vec<(f64, f64)>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ElasticParameters {
    #[serde(rename = "E")]
    young: f64,
    nu: f64,
    rho: f64,
}

impl MaterialCard {
    pub fn table1() -> Self {
        Self::from_json(TABLE1_CARD).expect("bundled card is valid")
    }

    pub fn table2() -> Self {
        Self::from_json(TABLE2_CARD).expect("bundled card is valid")
    }

    /// Looks up a bundled card by name (`table1`, `table2`, or the card's own name).
    pub fn builtin(name: &str) -> Option<Self> {
        [Self::table1(), Self::table2()]
            .into_iter()
            .zip(["table1", "table2"])
            .find(|(card, key)| *key == name || card.name == name)
            .map(|(card, _)| card)
    }

    pub fn from_json(text: &str) -> Result<Self, ConstitutiveError> {
        let raw: RawCard = serde_json::from_str(text).map_err(|e| ConstitutiveError::Card(e.to_string()))?;
        let params = serde_json::Value::Object(raw.parameters);
        let card_err = |e: serde_json::Error| ConstitutiveError::Card(format!("parameters: {e}"));
        let material = match raw.kind {
            CardType::Ogden => {
                if raw.hardening.is_some() {
                    return Err(ConstitutiveError::Card("ogden card cannot carry a hardening table".into()));
                }
                Material::Ogden(serde_json::from_value(params).map_err(card_err)?)
            }
            CardType::Elastoplastic => {
                let p: ElasticParameters = serde_json::from_value(params).map_err(card_err)?;
                let hardening = raw
                    .hardening
                    .ok_or_else(|| ConstitutiveError::Card("elastoplastic card needs a hardening table".into()))?;
                Material::Elastoplastic(PlasticMaterial { young: p.young, nu: p.nu, rho: p.rho, hardening })
            }
        };
        material.validate()?;
        Ok(Self { name: raw.name, material })
    }

    pub fn to_json(&self) -> String {
        let (kind, parameters, hardening) = match &self.material {
            Material::Ogden(m) => (CardType::Ogden, serde_json::to_value(m), None),
            Material::Elastoplastic(m) => (
                CardType::Elastoplastic,
                serde_json::to_value(ElasticParameters { young: m.young, nu: m.nu, rho: m.rho }),
                Some(m.hardening.clone()),
            ),
        };
        let parameters = match parameters.expect("plain numeric structs serialize") {
            serde_json::Value::Object(map) => map,
            _ => unreachable!("structs serialize to objects"),
        };
        let raw = RawCard { name: self.name.clone(), kind, parameters, hardening };
        serde_json::to_string_pretty(&raw).expect("card serializes")
    }
}
