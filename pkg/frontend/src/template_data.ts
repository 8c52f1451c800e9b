// Generated by tools/gen_frontend_assets.py; do not edit by hand.
export const REST_POINTS: number[][] = 
[[-110.0, -85.0, 0.0], [-138.0, -50.0, 0.0], [-82.0, -50.0, 0.0], [-132.0, -15.0, 0.0], [-88.0, -15.0, 0.0], [-155.0, -45.0, 8.0], [-168.0, -30.0, 12.0], [-176.0, -18.0, 14.0], [-182.0, -8.0, 15.0], [-140.0, -5.0, 0.0], [-144.0, 15.0, 2.0], [-146.0, 30.0, 3.0], [-148.0, 42.0, 4.0], [-120.0, 0.0, 0.0], [-121.0, 22.0, 2.0], [-122.0, 38.0, 3.0], [-123.0, 50.0, 4.0], [-100.0, -2.0, 0.0], [-99.0, 18.0, 2.0], [-98.0, 33.0, 3.0], [-97.0, 44.0, 4.0], [-82.0, -8.0, 0.0], [-78.0, 8.0, 1.0], [-76.0, 20.0, 2.0], [-74.0, 30.0, 3.0], [110.0, -85.0, 0.0], [138.0, -50.0, 0.0], [82.0, -50.0, 0.0], [132.0, -15.0, 0.0], [88.0, -15.0, 0.0], [155.0, -45.0, 8.0], [168.0, -30.0, 12.0], [176.0, -18.0, 14.0], [182.0, -8.0, 15.0], [140.0, -5.0, 0.0], [144.0, 15.0, 2.0], [146.0, 30.0, 3.0], [148.0, 42.0, 4.0], [120.0, 0.0, 0.0], [121.0, 22.0, 2.0], [122.0, 38.0, 3.0], [123.0, 50.0, 4.0], [100.0, -2.0, 0.0], [99.0, 18.0, 2.0], [98.0, 33.0, 3.0], [97.0, 44.0, 4.0], [82.0, -8.0, 0.0], [78.0, 8.0, 1.0], [76.0, 20.0, 2.0], [74.0, 30.0, 3.0]];
