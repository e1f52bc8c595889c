//! The on-device data types searched for, with their category, protection
//! level and typical use.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Device,
    Network,
    NetworkLocation,
    GpsLocation,
    UserAssets,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    PersistentId,
    ShortTerm,
    Profiling,
    LocationData,
    UserAsset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protection {
    Normal,
    Dangerous,
}

macro_rules! known_types {
    ($( $variant:ident => $label:literal, $cat:ident, $prot:ident, $purpose:ident; )*) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum KnownType { $( $variant, )* }

        impl KnownType {
            pub const ALL: &'static [KnownType] = &[ $( KnownType::$variant, )* ];

            pub fn label(self) -> &'static str {
                match self { $( KnownType::$variant => $label, )* }
            }

            pub fn category(self) -> Category {
                match self { $( KnownType::$variant => Category::$cat, )* }
            }

            pub fn protection(self) -> Protection {
                match self { $( KnownType::$variant => Protection::$prot, )* }
            }

            pub fn purpose(self) -> Purpose {
                match self { $( KnownType::$variant => Purpose::$purpose, )* }
            }
        }
    };
}

known_types! {
    DeviceId => "Device ID", Device, Normal, PersistentId;
    AdvertisingId => "Advertising ID", Device, Normal, PersistentId;
    Bootloader => "Bootloader", Device, Normal, Profiling;
    BuildFingerprint => "Build Fingerprint", Device, Normal, Profiling;
    CpuModel => "CPU Model", Device, Normal, Profiling;
    DisplayId => "Display ID", Device, Normal, Profiling;
    DeviceName => "Device Name", Device, Normal, Profiling;
    DeviceResolution => "Device Resolution", Device, Normal, Profiling;
    DeviceAbi => "Device ABI", Device, Normal, Profiling;
    DeviceModel => "Device Model", Device, Normal, Profiling;
    Dummy0Interface => "Dummy0 Interface", Device, Normal, ShortTerm;
    Operator => "Operator", Network, Normal, Profiling;
    WifiIp => "Device WiFi IP", Network, Normal, ShortTerm;
    WifiIp6 => "Device WiFi IP6", Network, Normal, ShortTerm;
    ProxyIp => "Device Proxy IP", Network, Normal, ShortTerm;
    GatewayIp => "Default Gateway IP", Network, Normal, ShortTerm;
    WifiMac => "WiFi MAC", Network, Normal, PersistentId;
    RouterEssid => "Router ESSID", NetworkLocation, Dangerous, LocationData;
    RouterBssid => "Router BSSID", NetworkLocation, Dangerous, LocationData;
    NeighborRouterEssid => "neighbor Router ESSID", NetworkLocation, Dangerous, LocationData;
    NeighborRouterBssid => "neighbor Router BSSID", NetworkLocation, Dangerous, LocationData;
    Gps7m => "GPS (<=7 meter accuracy)", GpsLocation, Dangerous, LocationData;
    Gps78m => "GPS (78 meter accuracy)", GpsLocation, Dangerous, LocationData;
    Gps787m => "GPS (787 meter accuracy)", GpsLocation, Dangerous, LocationData;
    ListOfApps => "List of Apps", UserAssets, Normal, Profiling;
    Sms => "SMS", UserAssets, Dangerous, UserAsset;
    PhoneNumber => "Phone Number", UserAssets, Dangerous, PersistentId;
    Contacts => "Contacts", UserAssets, Dangerous, UserAsset;
    DeviceEmail => "Device Email", UserAssets, Dangerous, PersistentId;
    UserFiles => "User Files", UserAssets, Dangerous, UserAsset;
}

/// A searchable data type: one of the fixed on-device rows, or a value the
/// UI interactor typed into an input field (e.g. `Input (password)`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DataType {
    Known(KnownType),
    Input(String),
}

impl DataType {
    pub fn label(&self) -> String {
        match self {
            DataType::Known(k) => k.label().to_string(),
            DataType::Input(field) => format!("Input ({field})"),
        }
    }

    pub fn category(&self) -> Category {
        match self {
            DataType::Known(k) => k.category(),
            DataType::Input(_) => Category::UserAssets,
        }
    }

    pub fn purpose(&self) -> Purpose {
        match self {
            DataType::Known(k) => k.purpose(),
            DataType::Input(_) => Purpose::UserAsset,
        }
    }

    pub fn is_gps(&self) -> bool {
        self.category() == Category::GpsLocation
    }

    /// Table position for stable rendering; inputs sort after known rows.
    pub fn rank(&self) -> usize {
        match self {
            DataType::Known(k) => KnownType::ALL.iter().position(|x| x == k).unwrap_or(0),
            DataType::Input(_) => KnownType::ALL.len(),
        }
    }

    pub fn is_password_input(&self) -> bool {
        matches!(self, DataType::Input(f) if matches!(f.to_ascii_lowercase().as_str(), "password" | "passwd" | "pwd"))
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for DataType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(k) = KnownType::ALL.iter().find(|k| k.label().eq_ignore_ascii_case(s)) {
            return Ok(DataType::Known(*k));
        }
        // accept the typographic form of the finest GPS row as well
        if s.eq_ignore_ascii_case("GPS (≤7 meter accuracy)") {
            return Ok(DataType::Known(KnownType::Gps7m));
        }
        if let Some(field) = s.strip_prefix("Input (").and_then(|r| r.strip_suffix(')')) {
            if !field.is_empty() {
                return Ok(DataType::Input(field.to_string()));
            }
        }
        Err(format!("unknown data type `{s}`"))
    }
}

impl Serialize for DataType {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for DataType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Content-type columns of the channel matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentColumn {
    Device,
    Network,
    OwnRouter,
    NeighborRouter,
    GpsLocation,
    UserAssets,
    Password,
    Token,
    KeyTransmission,
}

impl ContentColumn {
    pub const ALL: &'static [ContentColumn] = &[
        ContentColumn::Device,
        ContentColumn::Network,
        ContentColumn::OwnRouter,
        ContentColumn::NeighborRouter,
        ContentColumn::GpsLocation,
        ContentColumn::UserAssets,
        ContentColumn::Password,
        ContentColumn::Token,
        ContentColumn::KeyTransmission,
    ];

    pub fn for_data_type(t: &DataType) -> ContentColumn {
        match t {
            DataType::Known(KnownType::RouterEssid | KnownType::RouterBssid) => ContentColumn::OwnRouter,
            DataType::Known(KnownType::NeighborRouterEssid | KnownType::NeighborRouterBssid) => {
                ContentColumn::NeighborRouter
            }
            other => match other.category() {
                Category::Device => ContentColumn::Device,
                Category::Network => ContentColumn::Network,
                Category::NetworkLocation => ContentColumn::OwnRouter,
                Category::GpsLocation => ContentColumn::GpsLocation,
                Category::UserAssets => ContentColumn::UserAssets,
            },
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            ContentColumn::Device => "Device",
            ContentColumn::Network => "Network",
            ContentColumn::OwnRouter => "Own Router",
            ContentColumn::NeighborRouter => "Neighbor Router",
            ContentColumn::GpsLocation => "GPS Location",
            ContentColumn::UserAssets => "User Assets",
            ContentColumn::Password => "Password",
            ContentColumn::Token => "Token",
            ContentColumn::KeyTransmission => "Key Transmission",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thirty_rows() {
        assert_eq!(KnownType::ALL.len(), 30);
        let gps = KnownType::ALL
            .iter()
            .filter(|k| k.category() == Category::GpsLocation)
            .count();
        assert_eq!(gps, 3);
    }

    #[test]
    fn labels_roundtrip() {
        for k in KnownType::ALL {
            let t = DataType::Known(*k);
            assert_eq!(t.label().parse::<DataType>().unwrap(), t);
        }
        let input: DataType = "Input (email)".parse().unwrap();
        assert_eq!(input, DataType::Input("email".into()));
        assert!("Shoe Size".parse::<DataType>().is_err());
    }

    #[test]
    fn router_columns_split_own_and_neighbor() {
        assert_eq!(
            ContentColumn::for_data_type(&DataType::Known(KnownType::RouterBssid)),
            ContentColumn::OwnRouter
        );
        assert_eq!(
            ContentColumn::for_data_type(&DataType::Known(KnownType::NeighborRouterEssid)),
            ContentColumn::NeighborRouter
        );
    }
}
