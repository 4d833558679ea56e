//! Template prose used to author the checked-in description files.

use crate::geometry::fov_from_focal;

use super::bank::DescriptionSet;

const TEMPLATES: [&str; 24] = [
    "A focal length of {f} px gives a horizontal field of view of about {fov} degrees.",
    "At {f} px the lens frames roughly {fov} degrees of the road ahead.",
    "With a {f} px focal length a car 20 m away spans about {car} px across the frame.",
    "Distant vehicles are magnified by a factor of {mag} compared with a 1000 px reference lens.",
    "The view feels as wide as a {fov} degree window, so the scene context at the edges is {edge} px deep.",
    "Perspective compression at {f} px makes the gap between near and far objects look shallower.",
    "Objects keep their true 3D size but occupy {mag} times the pixels they would at 1000 px.",
    "A pedestrian 30 m ahead stands about {ped} px tall under a {f} px focal length.",
    "The horizon stays centered while the frame narrows or widens with the {f} px focal setting.",
    "Lane markings converge toward the vanishing point over {fov} degrees of horizontal coverage.",
    "A {f} px focal setting trades peripheral coverage for apparent object scale.",
    "Depth cues from apparent size must be read relative to the {f} px focal length.",
    "The same car looks larger as the focal length grows and smaller as it shrinks; here it is {f} px.",
    "Parallax between foreground and background is rendered through a {fov} degree cone.",
    "Image scale per meter at 10 m depth is about {scale} px for this {f} px camera.",
    "Far objects shrink toward the vanishing point at a rate set by the {f} px focal length.",
    "Roadside structures near the border are cropped when the field of view drops to {fov} degrees.",
    "The camera projects a 1.5 m tall object at 25 m to about {obj} px in height.",
    "Wider views emphasize global layout while narrower views emphasize detail; this lens sees {fov} degrees.",
    "Monocular depth from object height scales directly with the {f} px focal length.",
    "The angular size of a vehicle is the same but its pixel footprint follows the {f} px focal.",
    "Scene content outside the {fov} degree cone is not visible to this camera.",
    "Relative to a 700 px lens this view is zoomed by a factor of {zoom}.",
    "A {f} px focal length renders a 4 m long car at 40 m as roughly {car40} px wide.",
];

/// The 24 standard descriptions of a focal length expressed at `reference_width` pixels.
pub fn describe_focal(focal: f64, reference_width: f64) -> DescriptionSet {
    let fov = fov_from_focal(focal, reference_width).map(f64::to_degrees).unwrap_or(0.0);
    let subs = [
        ("{f}", format!("{}", super::bank::format_focal(focal))),
        ("{fov}", format!("{fov:.1}")),
        ("{car}", format!("{:.0}", focal * 4.0 / 20.0)),
        ("{car40}", format!("{:.0}", focal * 4.0 / 40.0)),
        ("{mag}", format!("{:.2}", focal / 1000.0)),
        ("{zoom}", format!("{:.2}", focal / 700.0)),
        ("{edge}", format!("{:.0}", reference_width / 2.0)),
        ("{ped}", format!("{:.0}", focal * 1.7 / 30.0)),
        ("{scale}", format!("{:.0}", focal / 10.0)),
        ("{obj}", format!("{:.0}", focal * 1.5 / 25.0)),
    ];
    let descriptions = TEMPLATES
        .iter()
        .map(|t| {
            let mut s = (*t).to_owned();
            for (k, v) in &subs {
                s = s.replace(k, v);
            }
            s
        })
        .collect();
    DescriptionSet { focal, descriptions }
}
